"""Asymmetric least squares loss, clipping and expectiles of discrete laws.

The ALS loss with asymmetry level ``tau`` is

    L(y, t) = (1 - tau) (y - t)^2   if y < t
    L(y, t) = tau (y - t)^2         if y >= t

Everything here is pure and vectorises over numpy arrays where that is
cheap; scalars go through the same code paths.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError

_RENORM_TOL = 1e-9
_MASS_TOL = 1e-12


@dataclass(frozen=True)
class ALSConfig:
    """Asymmetry level of the loss; ``c_tau``/``C_tau`` are derived on access."""

    tau: float

    def __post_init__(self):
        tau = float(self.tau)
        if not (0.0 < tau < 1.0):
            raise DomainError(f"tau must lie in (0, 1), got {self.tau!r}")
        object.__setattr__(self, "tau", tau)

    @property
    def c_tau(self) -> float:
        return min(self.tau, 1.0 - self.tau)

    @property
    def C_tau(self) -> float:
        return max(self.tau, 1.0 - self.tau)


def as_config(tau) -> ALSConfig:
    return tau if isinstance(tau, ALSConfig) else ALSConfig(tau)


def _check_clip_level(M) -> float:
    M = float(M)
    if not (M > 0.0 and math.isfinite(M)):
        raise DomainError(f"clip level must be a positive finite number, got {M!r}")
    return M


def als_loss(cfg, y, t):
    """ALS loss, elementwise over broadcast ``y`` and ``t``.

    Ties ``y == t`` fall into the ``y >= t`` branch, where the loss is zero
    anyway.
    """
    tau = as_config(cfg).tau
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
        raise DomainError("als_loss needs finite y and t")
    r = y - t
    out = np.where(r >= 0.0, tau, 1.0 - tau) * r * r
    return float(out) if out.ndim == 0 else out


def als_loss_derivative(cfg, y, t):
    """Derivative of the loss in its second argument, -2 w (y - t)."""
    tau = as_config(cfg).tau
    r = np.asarray(y, dtype=float) - np.asarray(t, dtype=float)
    out = -2.0 * np.where(r >= 0.0, tau, 1.0 - tau) * r
    return float(out) if out.ndim == 0 else out


def clip(t, M):
    """Truncate ``t`` to ``[-M, M]``."""
    M = _check_clip_level(M)
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("clip needs finite input")
    out = np.clip(t, -M, M)
    return float(out) if out.ndim == 0 else out


def lipschitz_constant(cfg, M) -> float:
    """Local Lipschitz constant of the loss on ``[-M, M]``: ``4 M C_tau``."""
    return as_config(cfg).C_tau * 4.0 * _check_clip_level(M)


class DiscreteDistribution:
    """Finitely supported probability distribution on the real line.

    Atoms with equal values are merged.  Masses whose total is within 1e-9
    of one are renormalised; anything further off is rejected.
    """

    __slots__ = ("values", "masses")

    def __init__(self, values: Iterable[float], masses: Iterable[float]):
        v = np.asarray(list(values), dtype=float).ravel()
        m = np.asarray(list(masses), dtype=float).ravel()
        if v.size == 0:
            raise DomainError("distribution needs at least one atom")
        if v.shape != m.shape:
            raise DomainError("values and masses differ in length")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(m))):
            raise DomainError("atoms must be finite")
        if np.any(m <= 0.0):
            raise DomainError("masses must be strictly positive")
        total = m.sum()
        if abs(total - 1.0) > _RENORM_TOL:
            raise DomainError(f"masses sum to {total!r}, not 1")
        uniq, inverse = np.unique(v, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inverse, m)
        merged /= merged.sum()
        uniq.setflags(write=False)
        merged.setflags(write=False)
        object.__setattr__(self, "values", uniq)
        object.__setattr__(self, "masses", merged)

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteDistribution is immutable")

    @classmethod
    def from_atoms(cls, atoms: Sequence[tuple[float, float]]) -> "DiscreteDistribution":
        if len(atoms) == 0:
            raise DomainError("distribution needs at least one atom")
        values, masses = zip(*atoms)
        return cls(values, masses)

    @classmethod
    def point_mass(cls, c: float) -> "DiscreteDistribution":
        return cls([c], [1.0])

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.values.tolist(), self.masses.tolist()))

    @property
    def span(self) -> float:
        return float(self.values[-1] - self.values[0])

    def mean(self) -> float:
        return float(self.values @ self.masses)

    def __len__(self):
        return self.values.size

    def __repr__(self):
        return f"DiscreteDistribution({self.atoms!r})"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["value", "mass"])
            for v, m in self.atoms:
                writer.writerow([repr(v), repr(m)])

    @classmethod
    def from_csv(cls, path) -> "DiscreteDistribution":
        with open(Path(path), newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["value", "mass"]:
                raise DomainError("distribution CSV must have header 'value,mass'")
            rows = [(float(r["value"]), float(r["mass"])) for r in reader]
        return cls.from_atoms(rows)


def newey_residual(Q: DiscreteDistribution, cfg, t: float) -> float:
    """tau E[(Y-t) 1{Y>=t}] - (1-tau) E[(t-Y) 1{Y<t}]; zero exactly at the expectile."""
    tau = as_config(cfg).tau
    v, m = Q.values, Q.masses
    up = v >= t
    return float(tau * ((v[up] - t) @ m[up]) - (1.0 - tau) * ((t - v[~up]) @ m[~up]))


def expectile(Q: DiscreteDistribution, cfg) -> float:
    """The tau-expectile of ``Q``.

    The first-order condition is continuous, piecewise linear and strictly
    decreasing in t.  Evaluating it at every atom brackets the root between
    two neighbouring atoms; on that bracket the set {y >= t} is fixed, so we
    bisect down to 1e-14 of the span and finish with one Newton step on the
    linear piece.
    """
    tau = as_config(cfg).tau
    v, m = Q.values, Q.masses
    if v.size == 1:
        return float(v[0])

    vm = v * m
    # suffix sums: atoms with index >= j are exactly those with y >= v[j]
    m_up = np.cumsum(m[::-1])[::-1]
    s_up = np.cumsum(vm[::-1])[::-1]
    m_lo = 1.0 - m_up
    s_lo = Q.mean() - s_up
    g = tau * (s_up - v * m_up) - (1.0 - tau) * (v * m_lo - s_lo)

    hits = np.flatnonzero(g == 0.0)
    if hits.size:
        return float(v[hits[0]])
    # g[0] > 0 > g[-1]; last index with positive g gives the left bracket end
    j = int(np.flatnonzero(g > 0.0)[-1])
    lo, hi = float(v[j]), float(v[j + 1])
    # on (v[j], v[j+1]] the upper set is indices j+1..
    Mu, Su = float(m_up[j + 1]), float(s_up[j + 1])
    Ml, Sl = 1.0 - Mu, float(Q.mean()) - Su

    def cond(t):
        return tau * (Su - t * Mu) - (1.0 - tau) * (t * Ml - Sl)

    width = 1e-14 * Q.span
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if cond(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    slope = -(tau * Mu + (1.0 - tau) * Ml)
    t = t - cond(t) / slope
    return float(min(max(t, v[j]), v[j + 1]))


def inner_risk(Q: DiscreteDistribution, cfg, t):
    """Expected loss sum_y L(y, t) m(y); vectorised over ``t``."""
    cfg = as_config(cfg)
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise DomainError("inner_risk needs finite t")
    losses = als_loss(cfg, Q.values[:, None], t_arr.reshape(1, -1))
    out = Q.masses @ losses
    return float(out[0]) if t_arr.ndim == 0 else out.reshape(t_arr.shape)


def excess_inner_risk(Q: DiscreteDistribution, cfg, t, t_star: float | None = None):
    """Inner risk at ``t`` minus its minimum, attained at the expectile."""
    cfg = as_config(cfg)
    if t_star is None:
        t_star = expectile(Q, cfg)
    return inner_risk(Q, cfg, t) - inner_risk(Q, cfg, t_star)
