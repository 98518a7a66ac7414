"""Exception types shared across the package.

Every error raised by the estimation code is a subclass of
:class:`ContivError`, so callers (notably the CLI) can map failures to
stable, documented codes via :data:`ERROR_CODES`.
"""

from __future__ import annotations

__all__ = [
    "ContivError",
    "InvalidBandwidth",
    "InvalidKernelOrder",
    "NotEnoughLocalData",
    "SingularDesign",
    "InvalidDensity",
    "EmptyFold",
    "FoldTooSmall",
    "RankDeficientDesign",
    "InvalidRate",
    "FoldOverlap",
    "NonFiniteResult",
    "QuadratureUnderResolved",
    "GridTooCoarse",
    "AllCandidatesFailed",
    "WeakInstrument",
    "ZeroDenominator",
    "MisalignedFolds",
    "MissingColumn",
    "NonBinaryTreatment",
    "NonNumericCell",
    "EmptyFile",
    "ConfigError",
    "ERROR_CODES",
    "error_code",
]


class ContivError(Exception):
    """Base class for all package errors."""


class InvalidBandwidth(ContivError):
    """Bandwidth is not a positive finite number."""


class InvalidKernelOrder(ContivError):
    """Requested kernel order is odd or below the supported minimum."""


class NotEnoughLocalData(ContivError):
    """Too few observations carry kernel weight; increase the bandwidth."""


class SingularDesign(ContivError):
    """Local design matrix is numerically singular; increase the bandwidth."""


class InvalidDensity(ContivError):
    """A density value required to be positive was not."""


class EmptyFold(ContivError):
    """A data fold required to be nonempty was empty."""


class FoldTooSmall(ContivError):
    """A data fold is below the minimum size for the requested fit."""


class RankDeficientDesign(ContivError):
    """Regression design has collinear columns."""


class InvalidRate(ContivError):
    """Nuisance error-rate exponent must be nonnegative."""


class FoldOverlap(ContivError):
    """Fold identifiers collide where disjoint folds are required."""


class NonFiniteResult(ContivError):
    """A computed quantity was NaN or infinite."""


class QuadratureUnderResolved(ContivError):
    """Successive quadrature refinements did not stabilize."""


class GridTooCoarse(ContivError):
    """Finite-difference grid spacing is too large for the bandwidth."""


class AllCandidatesFailed(ContivError):
    """Every candidate bandwidth errored during selection."""


class WeakInstrument(ContivError):
    """Treatment dose-response slope is below the relevance floor."""


class ZeroDenominator(ContivError):
    """Ratio denominator estimate is exactly zero."""


class MisalignedFolds(ContivError):
    """Influence arrays do not share the same observations."""


class MissingColumn(ContivError):
    """Input CSV lacks a required column."""


class NonBinaryTreatment(ContivError):
    """Treatment column contains values other than 0 and 1."""


class NonNumericCell(ContivError):
    """Input CSV cell could not be parsed as a number."""


class EmptyFile(ContivError):
    """Input CSV contains no data rows."""


class ConfigError(ContivError):
    """Run configuration is inconsistent or refers to missing files."""


ERROR_CODES: dict[type, str] = {
    InvalidBandwidth: "kernels.invalid_bandwidth",
    InvalidKernelOrder: "kernels.invalid_kernel_order",
    NotEnoughLocalData: "localpoly.not_enough_local_data",
    SingularDesign: "localpoly.singular_design",
    InvalidDensity: "localpoly.invalid_density",
    EmptyFold: "nuisance.empty_fold",
    FoldTooSmall: "nuisance.fold_too_small",
    RankDeficientDesign: "nuisance.rank_deficient_design",
    InvalidRate: "nuisance.invalid_rate",
    FoldOverlap: "pseudo.fold_overlap",
    NonFiniteResult: "pseudo.non_finite_result",
    QuadratureUnderResolved: "smooth.quadrature_under_resolved",
    GridTooCoarse: "bandwidth.grid_too_coarse",
    AllCandidatesFailed: "bandwidth.all_candidates_failed",
    WeakInstrument: "effects.weak_instrument",
    ZeroDenominator: "effects.zero_denominator",
    MisalignedFolds: "effects.misaligned_folds",
    MissingColumn: "cli.missing_column",
    NonBinaryTreatment: "cli.non_binary_treatment",
    NonNumericCell: "cli.non_numeric_cell",
    EmptyFile: "cli.empty_file",
    ConfigError: "cli.config_error",
}


def error_code(exc: BaseException) -> str:
    """Stable machine-readable code for a package exception."""
    return ERROR_CODES.get(type(exc), "contiv.internal_error")
