"""Synthetic problems with known expectiles and learning-rate experiments."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, ExpectileError
from .solver import Dataset, fit
from .theory import GaussianNoise, NoNoise, NoiseModel, SyntheticProblem, UniformNoise

DEFAULT_N_GRID = (128, 256, 512, 1024, 2048)
DEFAULT_ALPHA = 3.0
DEFAULT_SIGMA = 0.3


def _sine(x: np.ndarray) -> np.ndarray:
    return np.sin(2.0 * np.pi * x.mean(axis=1))


def _half_sine(x: np.ndarray) -> np.ndarray:
    return 0.5 * np.sin(2.0 * np.pi * x.mean(axis=1))


def _shifted(mean_fn: Callable, noise: NoiseModel, tau: float) -> Callable:
    # f* = mean + e_tau(noise); the sampler subtracts the same e_tau again
    shift = noise.expectile(tau)

    def target(x):
        return mean_fn(x) + shift

    return target


def make_problem(kind: str, d: int = 1, tau: float = 0.5, seed: int = 0,
                 sigma: float = DEFAULT_SIGMA) -> SyntheticProblem:
    """Problem factory.

    kinds:
      noiseless-sine   y = sin(2 pi xbar)
      gauss-noise      y = 0.5 sin(2 pi xbar) + sigma Z
      uniform-noise    y = 0.5 sin(2 pi xbar) + U[-0.25, 0.25]
      constant         y = 0.3 + sigma Z, expectile 0.3 at every x

    ``xbar`` is the coordinate mean.  For the noisy kinds the target is the
    conditional tau-expectile, i.e. the mean function shifted by the
    expectile of the noise.
    """
    if kind == "noiseless-sine":
        return SyntheticProblem(_sine, d, tau, NoNoise(), 1.0, seed, kind, _sine)
    if kind == "gauss-noise":
        noise = GaussianNoise(sigma)
        target = _shifted(_half_sine, noise, tau)
        bound = 0.5 + abs(noise.expectile(tau))
        return SyntheticProblem(target, d, tau, noise, bound, seed, kind, _half_sine)
    if kind == "uniform-noise":
        noise = UniformNoise(0.25)
        target = _shifted(_half_sine, noise, tau)
        bound = 0.5 + abs(noise.expectile(tau))
        return SyntheticProblem(target, d, tau, noise, bound, seed, kind, _half_sine)
    if kind == "constant":
        noise = GaussianNoise(sigma)
        mean = 0.3 - noise.expectile(tau)

        def target(x):
            return np.full(x.shape[0], 0.3)

        def mean_fn(x):
            return np.full(x.shape[0], mean)

        return SyntheticProblem(target, d, tau, noise, 0.3, seed, kind, mean_fn)
    raise DomainError(f"unknown problem kind {kind!r}")


PROBLEM_KINDS = ("noiseless-sine", "gauss-noise", "uniform-noise", "constant")


def synth(kind: str, d: int, n: int, seed: int, tau: float = 0.5) -> tuple[Dataset, SyntheticProblem]:
    """Draw ``n`` samples of a problem kind; the problem carries the f* evaluator."""
    if n < 1:
        raise DomainError("n must be >= 1")
    problem = make_problem(kind, d, tau, seed)
    data = problem.dataset(np.random.default_rng([seed, 0x5EED]), n)
    return data, problem


@dataclass(frozen=True)
class RateRow:
    n: int
    mean_excess: float
    std_excess: float
    clip_level: float | None = None
    lam: float = 0.0
    gamma: float = 0.0


@dataclass(frozen=True)
class RateExperiment:
    kind: str = "noiseless-sine"
    c1: float = 1.0
    c2: float = 1.0
    alpha: float = DEFAULT_ALPHA
    d: int = 1
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    repetitions: int = 5
    seed: int = 0
    mc_samples: int = 100_000
    results: tuple[RateRow, ...] = ()
    slope: float | None = None

    def __post_init__(self):
        grid = tuple(int(n) for n in self.n_grid)
        if not grid or any(a >= b for a, b in zip(grid, grid[1:])):
            raise DomainError("n_grid must be nonempty and strictly increasing")
        if self.repetitions < 1:
            raise DomainError("repetitions must be >= 1")
        if not (self.c1 > 0 and self.c2 > 0):
            raise DomainError("schedule constants must be positive")
        if self.alpha < 1.0 or self.d < 1:
            raise DomainError("need alpha >= 1 and d >= 1")
        object.__setattr__(self, "n_grid", grid)

    def schedule(self, n: int) -> tuple[float, float]:
        """lam_n = c1 / n and gamma_n = c2 n^(-1/(2 alpha + d))."""
        return self.c1 / n, self.c2 * n ** (-1.0 / (2.0 * self.alpha + self.d))

    @property
    def theoretical_slope(self) -> float:
        return -2.0 * self.alpha / (2.0 * self.alpha + self.d)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "mean_excess", "std_excess"])
            for r in self.results:
                w.writerow([r.n, repr(r.mean_excess), repr(r.std_excess)])

    def summary(self) -> dict:
        return {
            "kind": self.kind, "c1": self.c1, "c2": self.c2, "alpha": self.alpha, "d": self.d,
            "n_grid": list(self.n_grid), "repetitions": self.repetitions, "seed": self.seed,
            "mc_samples": self.mc_samples, "slope": self.slope,
            "theoretical_slope": self.theoretical_slope,
            "clip_levels": [r.clip_level for r in self.results],
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary())


def loglog_slope(ns: Sequence[float], values: Sequence[float]) -> float | None:
    """Least-squares slope of log(value) on log(n); None with fewer than 3 points."""
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if ns.size < 3 or np.any(values <= 0.0):
        return None
    slope, _ = np.polyfit(np.log(ns), np.log(values), 1)
    return float(slope)


@dataclass(frozen=True)
class TailSchedule:
    """Tail constants for ``P(|y| <= c rho^l) >= 1 - exp(-rho)``."""

    c: float = 3.0
    l: float = 0.5
    rho_hat: float = 1.0

    def __post_init__(self):
        if self.c < 1.0 or not self.l > 0.0 or self.rho_hat < 1.0:
            raise DomainError("need c >= 1, l > 0 and rho_hat >= 1")


def clip_schedule(sched: TailSchedule, n: float) -> float:
    """M_n = 2 c (rho_hat + ln n)^l."""
    if n < 3:
        raise DomainError(f"clip schedule needs n >= 3, got {n}")
    return 2.0 * sched.c * (sched.rho_hat + math.log(n)) ** sched.l


def _cell(exp: RateExperiment, problem: SyntheticProblem, n: int, rep: int,
          clip_level: float | None) -> float:
    lam, gam = exp.schedule(n)
    data_rng = np.random.default_rng([exp.seed, n, rep, 0])
    x, y = problem.sample(data_rng, n)
    model = fit(Dataset(x, y), problem.tau, lam, gam, clip_level)
    mc_rng = np.random.default_rng([exp.seed, n, rep, 1])
    xs = problem.sample_x(mc_rng, exp.mc_samples)
    return float(problem.conditional_excess(model.predict_clipped(xs), xs).mean())


def _run(exp: RateExperiment, tau: float, clip_for_n: Callable[[int], float | None],
         threads: int = 1) -> RateExperiment:
    problem = make_problem(exp.kind, exp.d, tau, exp.seed)
    cells = [(n, r) for n in exp.n_grid for r in range(exp.repetitions)]

    def work(cell):
        n, r = cell
        try:
            return _cell(exp, problem, n, r, clip_for_n(n))
        except ExpectileError:
            return math.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(work, cells))
    else:
        out = [work(c) for c in cells]

    rows = []
    for i, n in enumerate(exp.n_grid):
        vals = np.asarray(out[i * exp.repetitions:(i + 1) * exp.repetitions])
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            raise ExpectileError(f"every repetition failed at n={n}")
        lam, gam = exp.schedule(n)
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        rows.append(RateRow(n, float(vals.mean()), std, clip_for_n(n), lam, gam))
    slope = loglog_slope([r.n for r in rows], [r.mean_excess for r in rows])
    return replace(exp, results=tuple(rows), slope=slope)


def measure_rate(exp: RateExperiment, tau: float = 0.5, threads: int = 1) -> RateExperiment:
    """Excess clipped risk along the rate schedule; clip level is max |y_i|."""
    return _run(exp, tau, lambda n: None, threads)


def unbounded_rate_run(exp: RateExperiment, sched: TailSchedule, tau: float = 0.5,
                       threads: int = 1) -> RateExperiment:
    """As :func:`measure_rate`, but clipping at ``clip_schedule(sched, n)`` after training."""
    return _run(exp, tau, lambda n: clip_schedule(sched, n), threads)
