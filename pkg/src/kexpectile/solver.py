"""Kernel expectile regression by asymmetric IRLS.

We minimise over representer coefficients ``c``

    J(c) = lam * c' G c + (1/n) sum_i L_tau(y_i, (G c)_i)

The loss is piecewise quadratic and C^1, so fixing the residual signs turns
J into a quadratic whose minimiser solves the weighted kernel-ridge system

    (G + n lam W^{-1}) c = y,   W = diag(tau if y_i >= (Gc)_i else 1 - tau).

Each IRLS step is therefore a Newton step on the active sign pattern.  A
halving line search keeps the objective sequence nonincreasing.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .als import als_loss, als_loss_derivative, as_config, clip
from .errors import ConvergenceError, DomainError, NumericalError
from .kernel import GaussianKernel, gram, warn_if_wide

log = logging.getLogger(__name__)

MAX_ITER = 200
MAX_HALVINGS = 30
REL_DECREASE_TOL = 1e-12
JITTER_START = 1e-12
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class Dataset:
    """``n`` covariate rows in ``R^d`` with responses; optionally ``|y| <= M``."""

    x: np.ndarray
    y: np.ndarray
    declared_bound: float | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise DomainError("x must have shape (n, d)")
        if x.shape[0] != y.shape[0]:
            raise DomainError(f"{x.shape[0]} covariate rows but {y.shape[0]} responses")
        if y.size < 1:
            raise DomainError("dataset needs at least one sample")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise DomainError("dataset entries must be finite")
        if self.declared_bound is not None:
            M = float(self.declared_bound)
            if not M > 0.0:
                raise DomainError("declared bound must be positive")
            if np.any(np.abs(y) > M):
                raise DomainError(f"responses exceed the declared bound {M}")
            object.__setattr__(self, "declared_bound", M)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.declared_bound)

    @classmethod
    def from_csv(cls, path, declared_bound=None) -> "Dataset":
        """Read ``x1,...,xd,y`` CSV."""
        with open(Path(path), newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or len(header) < 2 or header[-1].strip() != "y":
                raise DomainError("dataset CSV needs a header x1,...,xd,y")
            rows = [[float(v) for v in row] for row in reader if row]
        d = len(header) - 1
        if any(len(r) != d + 1 for r in rows):
            raise DomainError("ragged dataset CSV")
        arr = np.asarray(rows, dtype=float).reshape(-1, d + 1)
        return cls(arr[:, :d], arr[:, d], declared_bound)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{j + 1}" for j in range(self.d)] + ["y"])
            for xi, yi in zip(self.x, self.y):
                w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    objective: float
    gradient_norm: float
    objective_history: tuple[float, ...] = ()
    jitter: float = 0.0
    wide_kernel: bool = False
    converged: bool = True


@dataclass(frozen=True)
class ExpectileModel:
    support_points: np.ndarray
    coefficients: np.ndarray
    gamma: float
    lam: float
    tau: float
    clip_level: float | None = None
    diagnostics: FitDiagnostics = field(default_factory=lambda: FitDiagnostics(0, 0.0, 0.0))

    def __post_init__(self):
        if self.support_points.shape[0] != self.coefficients.shape[0]:
            raise DomainError("coefficient count differs from support-point count")

    @property
    def kernel(self) -> GaussianKernel:
        return GaussianKernel(self.gamma)

    @property
    def d(self) -> int:
        return self.support_points.shape[1]

    def predict(self, x) -> np.ndarray | float:
        """Unclipped decision function sum_i c_i k(x_i, x)."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1 and X.size == self.d and self.d > 1 or X.ndim == 0
        X = _as_query(X, self.d)
        out = _chunked_predict(self.kernel, self.support_points, self.coefficients, X)
        return float(out[0]) if single else out

    def predict_clipped(self, x):
        if self.clip_level is None:
            raise DomainError("model has no clip level")
        return clip(self.predict(x), self.clip_level)

    def with_clip_level(self, M: float | None) -> "ExpectileModel":
        return ExpectileModel(self.support_points, self.coefficients, self.gamma, self.lam,
                              self.tau, None if M is None else float(M), self.diagnostics)

    def to_dict(self) -> dict:
        diag = asdict(self.diagnostics)
        diag["objective_history"] = list(diag["objective_history"])
        return {
            "tau": self.tau,
            "lambda": self.lam,
            "gamma": self.gamma,
            "clip_level": self.clip_level,
            "support_points": self.support_points.tolist(),
            "coefficients": self.coefficients.tolist(),
            "diagnostics": diag,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExpectileModel":
        pts = np.asarray(doc["support_points"], dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        diag = dict(doc.get("diagnostics") or {})
        diag["objective_history"] = tuple(diag.get("objective_history", ()))
        return cls(
            support_points=pts,
            coefficients=np.asarray(doc["coefficients"], dtype=float),
            gamma=float(doc["gamma"]),
            lam=float(doc["lambda"]),
            tau=float(doc["tau"]),
            clip_level=None if doc.get("clip_level") is None else float(doc["clip_level"]),
            diagnostics=FitDiagnostics(**diag) if diag else FitDiagnostics(0, 0.0, 0.0),
        )

    def save(self, path) -> None:
        # json writes floats with repr, which round-trips exactly
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ExpectileModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _as_query(X: np.ndarray, d: int) -> np.ndarray:
    if X.ndim == 0:
        X = X.reshape(1, 1)
    elif X.ndim == 1:
        X = X.reshape(1, -1) if X.size == d and d > 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != d:
        raise DomainError(f"expected covariates of dimension {d}, got shape {X.shape}")
    return X


def _chunked_predict(k: GaussianKernel, support, coef, X, chunk: int = 8192) -> np.ndarray:
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], chunk):
        stop = start + chunk
        out[start:stop] = k.cross(X[start:stop], support) @ coef
    return out


def predict(model: ExpectileModel, x):
    return model.predict(x)


def predict_clipped(model: ExpectileModel, x):
    return model.predict_clipped(x)


def empirical_risk(f, data: Dataset, tau) -> float:
    """Mean ALS loss of ``f`` on ``data``.

    ``f`` may be a model (evaluated clipped if it carries a clip level),
    any callable on an ``(n, d)`` array, or an array of precomputed values.
    """
    if isinstance(f, ExpectileModel):
        vals = f.predict_clipped(data.x) if f.clip_level is not None else f.predict(data.x)
    elif callable(f):
        vals = np.asarray(f(data.x), dtype=float)
    else:
        vals = np.asarray(f, dtype=float)
    vals = np.broadcast_to(vals, data.y.shape)
    return float(np.mean(als_loss(tau, data.y, vals)))


def objective(G: np.ndarray, y: np.ndarray, c: np.ndarray, lam: float, tau) -> float:
    Gc = G @ c
    return float(lam * (c @ Gc) + np.mean(als_loss(tau, y, Gc)))


def objective_gradient(G: np.ndarray, y: np.ndarray, c: np.ndarray, lam: float, tau) -> np.ndarray:
    Gc = G @ c
    return 2.0 * lam * Gc + G @ als_loss_derivative(tau, y, Gc) / y.size


def _factor(A: np.ndarray, scale: float):
    """Cholesky of ``A``, escalating a diagonal jitter on failure."""
    jitter = 0.0
    rel = JITTER_START
    while True:
        try:
            M = A if jitter == 0.0 else A + jitter * np.eye(A.shape[0])
            return cho_factor(M, lower=True, check_finite=False), jitter
        except LinAlgError:
            if rel > JITTER_MAX * (1 + 1e-9):
                raise NumericalError("weighted kernel system is numerically singular") from None
            jitter = rel * scale
            rel *= 10.0


def fit(data: Dataset, tau, lam: float, gamma: float, clip_level: float | None = None,
        *, G: np.ndarray | None = None, max_iter: int = MAX_ITER) -> ExpectileModel:
    """Fit the regularised kernel expectile estimator.

    ``clip_level`` defaults to ``max |y_i|``.  A precomputed Gram matrix of
    ``data.x`` may be supplied as ``G`` to share it across several ``lam``.
    """
    cfg = as_config(tau)
    lam = float(lam)
    if not lam > 0.0:
        raise DomainError(f"lambda must be positive, got {lam!r}")
    kern = GaussianKernel(gamma)
    wide = warn_if_wide(kern)
    if G is None:
        G = gram(kern, data.x).entries
    y = data.y
    n = y.size
    scale = float(np.trace(G)) / n
    if clip_level is None:
        clip_level = data.declared_bound if data.declared_bound is not None else float(np.max(np.abs(y)))
        if clip_level == 0.0:
            clip_level = None

    c = np.zeros(n)
    J = objective(G, y, c, lam, cfg)
    history = [J]
    pattern = y >= 0.0
    max_jitter = 0.0
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        w = np.where(pattern, cfg.tau, 1.0 - cfg.tau)
        A = G + np.diag(n * lam / w)
        factor, jitter = _factor(A, scale)
        max_jitter = max(max_jitter, jitter)
        c_full = cho_solve(factor, y, check_finite=False)
        step = 1.0
        c_try = c_full
        J_try = objective(G, y, c_try, lam, cfg)
        halvings = 0
        while J_try > J and halvings < MAX_HALVINGS:
            step *= 0.5
            halvings += 1
            c_try = c + step * (c_full - c)
            J_try = objective(G, y, c_try, lam, cfg)
        if J_try > J:
            # no descent available along the Newton direction: c is optimal to round-off
            converged = True
            break
        J_prev = J
        c, J = c_try, J_try
        history.append(J)
        new_pattern = y >= G @ c
        if step == 1.0 and np.array_equal(new_pattern, pattern):
            converged = True
            break
        if J_prev - J <= REL_DECREASE_TOL * max(abs(J_prev), np.finfo(float).tiny):
            converged = True
            break
        pattern = new_pattern

    grad = objective_gradient(G, y, c, lam, cfg)
    diag = FitDiagnostics(
        iterations=it,
        objective=J,
        gradient_norm=float(np.linalg.norm(grad)),
        objective_history=tuple(history),
        jitter=max_jitter,
        wide_kernel=wide,
        converged=converged,
    )
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", diag)
    log.debug("fit n=%d lam=%g gamma=%g: %d iterations, J=%.6g", n, lam, kern.gamma, it, J)
    pts = data.x.copy()
    pts.setflags(write=False)
    c.setflags(write=False)
    return ExpectileModel(pts, c, kern.gamma, lam, cfg.tau, clip_level, diag)


def as_function(model: ExpectileModel, clipped: bool = True) -> Callable[[np.ndarray], np.ndarray]:
    if clipped and model.clip_level is not None:
        return model.predict_clipped
    return model.predict
