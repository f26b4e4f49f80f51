"""Kernel-based expectile regression with Gaussian RBF kernels."""

from .als import (ALSConfig, DiscreteDistribution, als_loss, clip, excess_inner_risk, expectile,
                  inner_risk, lipschitz_constant)
from .errors import ConvergenceError, DomainError, ExpectileError, NumericalError
from .kernel import GaussianKernel, GramMatrix, gram
from .selection import GridSpec, TVSVMResult, make_grids, split, tv_svm
from .solver import Dataset, ExpectileModel, empirical_risk, fit, predict, predict_clipped

__version__ = "0.1.0"

__all__ = [
    "ALSConfig", "DiscreteDistribution", "als_loss", "clip", "excess_inner_risk", "expectile",
    "inner_risk", "lipschitz_constant", "ConvergenceError", "DomainError", "ExpectileError",
    "NumericalError", "GaussianKernel", "GramMatrix", "gram", "GridSpec", "TVSVMResult",
    "make_grids", "split", "tv_svm", "Dataset", "ExpectileModel", "empirical_risk", "fit",
    "predict", "predict_clipped",
]
