"""Gaussian RBF kernels, Gram matrices and capacity diagnostics.

The kernel is ``k(x, x') = exp(-||x - x'||^2 / gamma^2)``.  Besides Gram
assembly this module evaluates the entropy-number and covering-number
bounds for the Gaussian RKHS unit ball and estimates the eigenvalue decay of
the empirical integral operator ``G / n``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import DomainError, NumericalError

_FLUSH = 1e-300


@dataclass(frozen=True)
class GaussianKernel:
    gamma: float

    def __post_init__(self):
        g = float(self.gamma)
        if not (g > 0.0 and math.isfinite(g)):
            raise DomainError(f"kernel width must be positive, got {self.gamma!r}")
        object.__setattr__(self, "gamma", g)

    @property
    def is_wide(self) -> bool:
        """True for widths above 1, where the capacity bounds do not apply."""
        return self.gamma > 1.0

    def __call__(self, x, x_prime) -> float:
        return eval_kernel(self, x, x_prime)

    def cross(self, A, B) -> np.ndarray:
        """Kernel matrix between the rows of ``A`` and ``B``."""
        A = _as_points(A)
        B = _as_points(B)
        if A.shape[1] != B.shape[1]:
            raise DomainError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
        K = np.exp(-cdist(A, B, "sqeuclidean") / self.gamma**2)
        K[K < _FLUSH] = 0.0
        return K


def _as_points(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    if P.ndim != 2:
        raise DomainError("points must be a 2-d array of shape (n, d)")
    if not np.all(np.isfinite(P)):
        raise DomainError("points must be finite")
    return P


def eval_kernel(k: GaussianKernel, x, x_prime) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape:
        raise DomainError(f"dimension mismatch: {x.shape} vs {x_prime.shape}")
    diff = x - x_prime
    return math.exp(-float(diff @ diff) / k.gamma**2)


@dataclass(frozen=True)
class GramMatrix:
    entries: np.ndarray
    points: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]


def gram(k: GaussianKernel, points) -> GramMatrix:
    """Exactly symmetric Gram matrix with unit diagonal.

    Pairwise distances come from the condensed (upper-triangle) form and are
    mirrored, so ``G[i, j] == G[j, i]`` bit for bit.
    """
    P = _as_points(points)
    if P.shape[0] == 0:
        raise DomainError("gram needs at least one point")
    if P.shape[0] == 1:
        G = np.ones((1, 1))
    else:
        cond = np.exp(-pdist(P, "sqeuclidean") / k.gamma**2)
        cond[cond < _FLUSH] = 0.0
        G = squareform(cond, checks=False)
        np.fill_diagonal(G, 1.0)
    G.setflags(write=False)
    P = P.copy()
    P.setflags(write=False)
    return GramMatrix(G, P)


def empirical_eigendecay(G: GramMatrix) -> np.ndarray:
    """Eigenvalues of ``G / n`` in nonincreasing order."""
    n = G.n
    try:
        lam = eigvalsh(G.entries / n)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    return lam[::-1].copy()


def eigendecay_exponent(eigenvalues, floor: float = 1e-12) -> float:
    """Least-squares slope of log(lambda_i) against log(i) over 2 <= i <= n/4.

    Eigenvalues below ``floor * lambda_1`` are dropped first: for Gaussian
    kernels the spectrum reaches round-off level long before n/4.  The decay
    assumption ``lambda_i <= a i^(-1/p)`` corresponds to slope ``-1/p``.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    n = lam.size
    idx = np.arange(2, n // 4 + 1)
    keep = lam[idx - 1] > floor * lam[0]
    idx = idx[keep]
    if idx.size < 2:
        raise DomainError("not enough eigenvalues above the floor to fit a slope")
    slope, _ = np.polyfit(np.log(idx), np.log(lam[idx - 1]), 1)
    return float(slope)


@dataclass(frozen=True)
class EntropyBoundParams:
    p: float
    d: int
    K: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise DomainError(f"p must lie in (0, 1), got {self.p!r}")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"d must be a positive integer, got {self.d!r}")
        if not self.K > 0.0:
            raise DomainError(f"K must be positive, got {self.K!r}")
        if not (0.0 < self.gamma <= 1.0):
            raise DomainError(f"gamma must lie in (0, 1], got {self.gamma!r}")


def entropy_bound(params: EntropyBoundParams, i: int) -> float:
    """(3K)^(1/p) ((d+1)/(e p))^((d+1)/p) gamma^(-d/p) i^(-1/p)."""
    if int(i) != i or i < 1:
        raise DomainError(f"i must be a positive integer, got {i!r}")
    p, d = params.p, params.d
    return (
        (3.0 * params.K) ** (1.0 / p)
        * ((d + 1) / (math.e * p)) ** ((d + 1) / p)
        * params.gamma ** (-d / p)
        * float(i) ** (-1.0 / p)
    )


def covering_bound(K: float, d: int, gamma: float, eps: float) -> float:
    """Log covering number bound K (log 1/eps)^(d+1) gamma^(-d)."""
    if not (0.0 < eps < 0.5):
        raise DomainError(f"eps must lie in (0, 1/2), got {eps!r}")
    if not (0.0 < gamma <= 1.0):
        raise DomainError(f"gamma must lie in (0, 1], got {gamma!r}")
    if not K > 0.0:
        raise DomainError(f"K must be positive, got {K!r}")
    return K * math.log(1.0 / eps) ** (d + 1) * gamma ** (-d)


def entropy_maximizer(p: float, d: int) -> float:
    """Closed-form argmax over eps of eps^p (log 1/eps)^(d+1): exp(-(d+1)/p)."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    return math.exp(-(d + 1) / p)


def entropy_profile_max(p: float, d: int) -> float:
    """Value of eps^p (log 1/eps)^(d+1) at its maximiser: ((d+1)/(e p))^(d+1)."""
    return ((d + 1) / (math.e * p)) ** (d + 1)


def warn_if_wide(k: GaussianKernel) -> bool:
    if k.is_wide:
        warnings.warn(
            f"kernel width {k.gamma} > 1 lies outside the range covered by the capacity bounds",
            stacklevel=3,
        )
    return k.is_wide


def entropy_maximizer_grid(p: float, d: int, points: int = 200_001) -> tuple[float, float, float]:
    """Brute-force argmax of eps^p (log 1/eps)^(d+1) over eps in (0, 1/2).

    The grid is uniform in log(eps) down to three times the closed-form
    exponent.  Returns ``(eps, value, log_step)``.
    """
    log_eps = np.linspace(math.log(0.5), -3.0 * (d + 1) / p, points)[1:]
    prof = np.exp(p * log_eps) * (-log_eps) ** (d + 1)
    k = int(np.argmax(prof))
    return float(np.exp(log_eps[k])), float(prof[k]), float(log_eps[0] - log_eps[1])
