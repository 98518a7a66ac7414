"""Nonparametric dose-response and local-IV estimation with a continuous instrument."""

from .data import Dataset, ingest_csv, rescale_unit
from .dgp import COMPLIER, DERIV_ONLY, LIV_MAIN, get_dgp
from .effects import liv_curve, maximal_complier, threshold_density
from .kernels import KernelSpec, kernel, make_high_order
from .pseudo import (
    CurveConfig,
    CurveEstimate,
    FixedSource,
    LearnerSource,
    SyntheticSource,
    WrongSource,
    boundary_curve,
    crossfit_curve,
    crossfit_curves,
)
from .smooth import smooth_curve, smooth_curves

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "ingest_csv",
    "rescale_unit",
    "kernel",
    "KernelSpec",
    "make_high_order",
    "CurveConfig",
    "CurveEstimate",
    "SyntheticSource",
    "WrongSource",
    "LearnerSource",
    "FixedSource",
    "crossfit_curve",
    "crossfit_curves",
    "boundary_curve",
    "smooth_curve",
    "smooth_curves",
    "liv_curve",
    "threshold_density",
    "maximal_complier",
    "LIV_MAIN",
    "DERIV_ONLY",
    "COMPLIER",
    "get_dgp",
    "__version__",
]
