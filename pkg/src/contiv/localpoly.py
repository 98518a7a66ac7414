"""Weighted local polynomial regression of a response on a scalar regressor.

Solves, for evaluation point z0 and bandwidth h,

    beta_hat = argmin_beta  P_n[ K_h(Z - z0) { Y - g_h(Z - z0)' beta }^2 ]

with the rescaled basis g_h(z) = (1, z/h, ..., z^p/h^p)'.  The fitted
value is beta_hat[0] and the first derivative is beta_hat[1] / h.  Fits
near the support edge need no special handling beyond using one-sided
kernel windows; the variance matrix switches to truncated-window moments
there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidDensity, NotEnoughLocalData, SingularDesign
from .kernels import KernelSpec

__all__ = [
    "LocalFit",
    "fit",
    "value",
    "derivative",
    "value_stderr",
    "derivative_stderr",
    "v_matrix",
    "v_matrix_for",
]

# Reject designs whose condition number exceeds this; a ridge fallback
# would silently bias beta and break polynomial reproduction.
_MAX_CONDITION = 1e12

# Fraction of the kernel window that must lie outside the data range on
# one side before the variance matrix switches to truncated moments.
_BOUNDARY_FRACTION = 0.9


@dataclass(frozen=True)
class LocalFit:
    """Result of one weighted local polynomial fit.

    Attributes
    ----------
    z0, h, p : evaluation point, bandwidth, polynomial degree.
    beta : ndarray, shape (p + 1,)
        Rescaled coefficients; beta[0] is the fitted value and
        beta[1] / h the fitted derivative.
    dhat : ndarray, shape (p + 1, p + 1)
        Empirical design matrix P_n[g_h K_h g_h'].
    n_local : int
        Observations with nonzero kernel weight.
    residual_variance : float
        Kernel-weighted mean squared residual at z0.
    kernel : KernelSpec
    u_window : tuple of float
        Data range in kernel units, clipped to the kernel window; used
        to detect boundary evaluation points.
    """

    z0: float
    h: float
    p: int
    beta: np.ndarray
    dhat: np.ndarray
    n_local: int
    residual_variance: float
    kernel: KernelSpec
    u_window: tuple[float, float]


def fit(
    z: np.ndarray,
    y: np.ndarray,
    z0: float,
    h: float,
    p: int,
    kernel: KernelSpec,
) -> LocalFit:
    """Fit a degree-p local polynomial of y on z at z0.

    Raises
    ------
    NotEnoughLocalData
        Fewer than p + 2 observations carry kernel weight.
    SingularDesign
        The weighted design matrix is numerically singular.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    n = z.shape[0]
    if y.shape[0] != n:
        raise ValueError("z and y must have equal length")

    w_full = kernel.localized(z, z0, h)
    local = w_full > 0.0
    n_local = int(np.count_nonzero(local))
    if n_local < p + 2:
        raise NotEnoughLocalData(
            f"{n_local} observations in the kernel window at z0={z0:g}, "
            f"need at least {p + 2}; increase h"
        )

    u = (z[local] - z0) / h
    w = w_full[local]
    basis = u[:, None] ** np.arange(p + 1)[None, :]
    wb = basis * w[:, None]
    dhat = (wb.T @ basis) / n
    rhs = (wb.T @ y[local]) / n

    evals = np.linalg.eigvalsh(dhat)
    if evals[0] <= 0 or evals[-1] / evals[0] > _MAX_CONDITION:
        raise SingularDesign(
            f"local design at z0={z0:g} has condition number above "
            f"{_MAX_CONDITION:g}; increase h"
        )
    beta = cho_solve(cho_factor(dhat), rhs)

    resid = y[local] - basis @ beta
    residual_variance = float(np.sum(w * resid**2) / np.sum(w))

    r = kernel.window_radius
    lo = max(-r, (float(np.min(z)) - z0) / h)
    hi = min(r, (float(np.max(z)) - z0) / h)
    return LocalFit(
        z0=float(z0),
        h=float(h),
        p=int(p),
        beta=beta,
        dhat=dhat,
        n_local=n_local,
        residual_variance=residual_variance,
        kernel=kernel,
        u_window=(lo, hi),
    )


def value(f: LocalFit) -> float:
    """Fitted curve value at z0."""
    return float(f.beta[0])


def derivative(f: LocalFit) -> float:
    """Fitted first derivative at z0."""
    if f.p < 1:
        raise ValueError("derivative needs polynomial degree p >= 1")
    return float(f.beta[1] / f.h)


def v_matrix_for(kernel: KernelSpec, p: int, u_window: tuple[float, float]) -> np.ndarray:
    """V = S^{-1} S~ S^{-1} from kernel moments.

    Interior windows use full-support moments; windows truncated by the
    data range use moments integrated over the observed window only.
    """
    r = kernel.window_radius
    lo, hi = u_window
    if lo > -_BOUNDARY_FRACTION * r or hi < _BOUNDARY_FRACTION * r:
        pairs = [kernel.truncated_moments(j, lo, hi) for j in range(2 * p + 1)]
    else:
        pairs = [(kernel.moment_mu(j), kernel.moment_nu(j)) for j in range(2 * p + 1)]
    mu = np.array([m for m, _ in pairs])
    nu = np.array([v for _, v in pairs])
    idx = np.add.outer(np.arange(p + 1), np.arange(p + 1))
    s = mu[idx]
    s_tilde = nu[idx]
    s_inv = np.linalg.inv(s)
    return s_inv @ s_tilde @ s_inv


def v_matrix(f: LocalFit) -> np.ndarray:
    """Variance matrix for one fit; see :func:`v_matrix_for`."""
    return v_matrix_for(f.kernel, f.p, f.u_window)


def value_stderr(f: LocalFit, f_hat_z0: float, n: int) -> float:
    """Standard error of the fitted value: sqrt(sigma^2 V11 / (f n h))."""
    if f_hat_z0 <= 0:
        raise InvalidDensity(f"marginal density estimate {f_hat_z0!r} must be positive")
    v11 = v_matrix(f)[0, 0]
    return float(np.sqrt(f.residual_variance * v11 / (f_hat_z0 * n * f.h)))


def derivative_stderr(f: LocalFit, f_hat_z0: float, n: int) -> float:
    """Standard error of the fitted derivative: sqrt(sigma^2 V22 / (f n h^3))."""
    if f_hat_z0 <= 0:
        raise InvalidDensity(f"marginal density estimate {f_hat_z0!r} must be positive")
    v22 = v_matrix(f)[1, 1]
    return float(np.sqrt(f.residual_variance * v22 / (f_hat_z0 * n * f.h**3)))
