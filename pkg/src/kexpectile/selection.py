"""Hyperparameter grids and the training/validation split selector (TV-SVM).

The data are split in order into a training half of ``m = n//2 + 1``
samples and a validation remainder.  Every ``(lambda, gamma)`` cell is fit
on the training half and scored by the clipped empirical risk on the
validation half; the smallest score wins, ties going to the larger lambda
and then the larger gamma.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .als import als_loss, as_config, clip
from .errors import DomainError, ExpectileError
from .kernel import GaussianKernel, gram
from .solver import Dataset, ExpectileModel, fit

GridMode = Literal["strict_net", "practical"]


@dataclass(frozen=True)
class GridSpec:
    lambdas: tuple[float, ...]
    gammas: tuple[float, ...]
    mode: str = "practical"

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        gam = tuple(float(v) for v in self.gammas)
        for name, seq in (("lambdas", lam), ("gammas", gam)):
            if not seq:
                raise DomainError(f"{name} must be nonempty")
            if any(not (0.0 < v <= 1.0) for v in seq):
                raise DomainError(f"{name} must lie in (0, 1]")
            if any(a <= b for a, b in zip(seq, seq[1:])):
                raise DomainError(f"{name} must be strictly decreasing")
        if self.mode not in ("strict_net", "practical"):
            raise DomainError(f"unknown grid mode {self.mode!r}")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "gammas", gam)

    @property
    def cells(self) -> list[tuple[float, float]]:
        return [(lam, gam) for lam in self.lambdas for gam in self.gammas]

    def __len__(self):
        return len(self.lambdas) * len(self.gammas)


def split(data: Dataset) -> tuple[Dataset, Dataset]:
    """First ``n//2 + 1`` samples for training, the rest for validation."""
    n = data.n
    if n < 4:
        raise DomainError(f"split needs n >= 4, got {n}")
    m = n // 2 + 1
    return data.subset(slice(0, m)), data.subset(slice(m, n))


def net_points(radius: float) -> tuple[float, ...]:
    """Decreasing net of (0, 1]: multiples of ``2 radius`` capped at 1, plus ``radius``.

    Every point of (0, 1] lies within ``radius`` of the result.
    """
    if not (0.0 < radius <= 1.0):
        raise DomainError(f"net radius must lie in (0, 1], got {radius!r}")
    count = math.ceil(1.0 / (2.0 * radius))
    pts = {min(2.0 * k * radius, 1.0) for k in range(1, count + 1)}
    pts.add(1.0)
    pts.add(radius)
    return tuple(sorted(pts, reverse=True))


def _lambda_net(n: int) -> tuple[float, ...]:
    # 2k/n computed as an exact quotient so that n/2 multiples hit 1.0
    size = math.ceil(n / 2)
    pts = {min(2.0 * k / n, 1.0) for k in range(1, size + 1)}
    pts.add(1.0)
    pts.add(1.0 / n)
    return tuple(sorted(pts, reverse=True))


def gamma_net_radius(n: int, alpha: float, d: int) -> float:
    return float(n) ** (-1.0 / (2.0 * alpha + d))


def make_grids(n: int, alpha: float = 3.0, d: int = 1, mode: GridMode = "practical") -> GridSpec:
    if n < 4 or alpha < 1.0 or d < 1:
        raise DomainError(f"invalid grid parameters n={n}, alpha={alpha}, d={d}")
    delta = gamma_net_radius(n, alpha, d)
    if mode == "strict_net":
        return GridSpec(_lambda_net(n), net_points(delta), mode)
    if mode == "practical":
        lambdas = np.geomspace(1.0, 1e-2 / n, 15)
        gammas = np.geomspace(1.0, 0.25 * delta, 10)
        return GridSpec(tuple(lambdas), tuple(gammas), mode)
    raise DomainError(f"unknown grid mode {mode!r}")


def verify_net(points, radius: float, probes: int = 100_000) -> float:
    """Largest distance from a uniform probe of (0, 1] to ``points``.

    The grid is a ``radius``-net when the returned value is <= radius.
    """
    grid = np.sort(np.asarray(points, dtype=float))
    x = np.arange(1, probes + 1) / probes
    pos = np.searchsorted(grid, x)
    left = grid[np.clip(pos - 1, 0, grid.size - 1)]
    right = grid[np.clip(pos, 0, grid.size - 1)]
    dist = np.minimum(np.abs(x - left), np.abs(x - right))
    return float(dist.max())


@dataclass(frozen=True)
class TVSVMResult:
    chosen_lambda: float
    chosen_gamma: float
    model: ExpectileModel
    validation_risk_table: dict[tuple[float, float], float]

    @property
    def validation_risk(self) -> float:
        return self.validation_risk_table[(self.chosen_lambda, self.chosen_gamma)]

    def table_rows(self) -> list[tuple[float, float, float]]:
        return [(lam, gam, risk) for (lam, gam), risk in self.validation_risk_table.items()]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "gamma", "risk"])
            for lam, gam, risk in self.table_rows():
                w.writerow([repr(lam), repr(gam), repr(risk)])


def _select(table: dict[tuple[float, float], float]) -> tuple[float, float]:
    valid = [(risk, lam, gam) for (lam, gam), risk in table.items() if math.isfinite(risk)]
    if not valid:
        raise ExpectileError("every grid cell failed to fit")
    best = min(r for r, _, _ in valid)
    # ties: larger lambda first, then larger gamma
    _, lam, gam = max((v for v in valid if v[0] == best), key=lambda v: (v[1], v[2]))
    return lam, gam


def tv_svm(data: Dataset, tau, grids: GridSpec, clip_level: float | None = None,
           threads: int = 1) -> TVSVMResult:
    """Training/validation selection over ``grids``.

    ``clip_level`` defaults to the declared bound of ``data`` or, failing
    that, to ``max |y_i|`` over the training half.
    """
    cfg = as_config(tau)
    d1, d2 = split(data)
    if clip_level is None:
        clip_level = data.declared_bound if data.declared_bound is not None else float(np.max(np.abs(d1.y)))
    if not clip_level > 0.0:
        raise DomainError("clip level must be positive")

    lambdas = list(dict.fromkeys(grids.lambdas))
    gammas = list(dict.fromkeys(grids.gammas))

    def per_gamma(gam: float):
        kern = GaussianKernel(gam)
        G = gram(kern, d1.x).entries
        K_val = kern.cross(d2.x, d1.x)
        risks, models = {}, {}
        for lam in lambdas:
            try:
                model = fit(d1, cfg, lam, gam, clip_level, G=G)
            except ExpectileError:
                risks[lam] = math.inf
                continue
            pred = clip(K_val @ model.coefficients, clip_level)
            risks[lam] = float(np.mean(als_loss(cfg, d2.y, pred)))
            models[lam] = model
        return risks, models

    if threads > 1 and len(gammas) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per = list(pool.map(per_gamma, gammas))
    else:
        per = [per_gamma(g) for g in gammas]

    table: dict[tuple[float, float], float] = {}
    models: dict[tuple[float, float], ExpectileModel] = {}
    for lam in lambdas:
        for gam, (risks, mods) in zip(gammas, per):
            table[(lam, gam)] = risks[lam]
            if lam in mods:
                models[(lam, gam)] = mods[lam]
    lam, gam = _select(table)
    return TVSVMResult(lam, gam, models[(lam, gam)], table)
