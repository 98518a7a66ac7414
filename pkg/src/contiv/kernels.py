"""Kernel functions, localized forms, and high-order kernel construction.

A kernel of order ``l`` integrates to one and has vanishing moments
``int u^j K(u) du = 0`` for ``1 <= j <= l - 1``.  Symmetric densities such
as the Epanechnikov and Gaussian kernels are order 2.  Higher even orders
are built as an even polynomial times the standard normal density, with
polynomial coefficients solved from the vanishing-moment linear system.

Conventions:
    K_h(z)        = K(z / h) / h                  (localized kernel)
    d/dz K_h(z)   = K'(z / h) / h^2               (localized derivative)
    mu_j          = int u^j K(u) du
    nu_j          = int u^j K(u)^2 du
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .errors import InvalidBandwidth, InvalidKernelOrder

__all__ = ["KernelSpec", "kernel", "make_high_order", "moments"]

_SQRT_2PI = np.sqrt(2.0 * np.pi)

# Integration range for unbounded (Gaussian-tail) kernels; phi(10) ~ 8e-23.
_QUAD_RADIUS = 10.0
# Effective window radius used for local-data counts and boundary detection.
_GAUSS_WINDOW_RADIUS = 8.0


@dataclass(frozen=True)
class KernelSpec:
    """Immutable kernel description; all evaluations are pure functions.

    Parameters
    ----------
    name : str
        Registry name ("epanechnikov", "gaussian", "gaussian4", ...).
    order : int
        Kernel order: moments 1..order-1 vanish.
    compact : bool
        True when the support is [-1, 1]; False for Gaussian-tail kernels.
    poly : tuple of float or None
        Coefficients (c0, c1, ...) of the even polynomial
        ``P(u) = sum_k c_k u^(2k)`` for Gaussian-family kernels
        ``K(u) = P(u) phi(u)``.  None for the Epanechnikov kernel.
    """

    name: str
    order: int
    compact: bool
    poly: tuple[float, ...] | None

    # -- base kernel ----------------------------------------------------

    def eval(self, u):
        """K(u); zero outside [-1, 1] for compact kernels."""
        u = np.asarray(u, dtype=float)
        if self.poly is None:
            out = 0.75 * np.maximum(0.0, 1.0 - u * u)
        else:
            out = self._polyval(u) * np.exp(-0.5 * u * u) / _SQRT_2PI
        return out if out.ndim else float(out)

    def deriv(self, u):
        """K'(u).

        The Epanechnikov derivative jumps at |u| = 1; values at and
        beyond the support edge are reported as 0 (the outside limit).
        """
        u = np.asarray(u, dtype=float)
        if self.poly is None:
            out = np.where(np.abs(u) < 1.0, -1.5 * u, 0.0)
        else:
            phi = np.exp(-0.5 * u * u) / _SQRT_2PI
            out = (self._polyderiv(u) - u * self._polyval(u)) * phi
        return out if out.ndim else float(out)

    def __call__(self, u):
        return self.eval(u)

    # -- localized forms -------------------------------------------------

    def localized(self, z, z0: float, h: float):
        """K_h(z - z0) = K((z - z0) / h) / h."""
        _check_bandwidth(h)
        return self.eval((np.asarray(z, dtype=float) - z0) / h) / h

    def localized_deriv(self, z, z0: float, h: float):
        """d/dz K_h(z - z0) = K'((z - z0) / h) / h^2."""
        _check_bandwidth(h)
        return self.deriv((np.asarray(z, dtype=float) - z0) / h) / h**2

    # -- moments ----------------------------------------------------------

    @property
    def window_radius(self) -> float:
        """Radius beyond which weight is treated as numerically zero."""
        return 1.0 if self.compact else _GAUSS_WINDOW_RADIUS

    def moment_mu(self, j: int) -> float:
        """mu_j = int u^j K(u) du over the (effective) support."""
        return _moment_table(self, int(j))[0]

    def moment_nu(self, j: int) -> float:
        """nu_j = int u^j K(u)^2 du over the (effective) support."""
        return _moment_table(self, int(j))[1]

    def truncated_moments(self, j: int, lo: float, hi: float) -> tuple[float, float]:
        """(mu_j, nu_j) integrated over the window [lo, hi] only."""
        lo = max(lo, -_QUAD_RADIUS)
        hi = min(hi, _QUAD_RADIUS)
        mu = quad(lambda u: u**j * self.eval(u), lo, hi, epsabs=1e-12, limit=200)[0]
        nu = quad(lambda u: u**j * self.eval(u) ** 2, lo, hi, epsabs=1e-12, limit=200)[0]
        return mu, nu

    # -- internals ---------------------------------------------------------

    def _polyval(self, u):
        u2 = u * u
        out = np.zeros_like(u, dtype=float)
        for c in reversed(self.poly):
            out = out * u2 + c
        return out

    def _polyderiv(self, u):
        # d/du P(u) for P(u) = sum c_k u^(2k)
        u2 = u * u
        out = np.zeros_like(u, dtype=float)
        for k in range(len(self.poly) - 1, 0, -1):
            out = out * u2 + 2 * k * self.poly[k]
        return out * u


def _check_bandwidth(h: float) -> None:
    if not np.isfinite(h) or h <= 0:
        raise InvalidBandwidth(f"bandwidth must be positive and finite, got {h!r}")


@lru_cache(maxsize=None)
def _moment_table(spec: KernelSpec, j: int) -> tuple[float, float]:
    r = 1.0 if spec.compact else _QUAD_RADIUS
    return spec.truncated_moments(j, -r, r)


def moments(spec: KernelSpec, max_j: int) -> list[tuple[float, float]]:
    """Quadrature values of (mu_j, nu_j) for j = 0..max_j."""
    if max_j < 0:
        raise ValueError("max_j must be nonnegative")
    return [(spec.moment_mu(j), spec.moment_nu(j)) for j in range(max_j + 1)]


def _gaussian_even_moment(k: int) -> float:
    # E[U^(2k)] for U ~ N(0, 1): (2k-1)!!
    out = 1.0
    for m in range(1, 2 * k, 2):
        out *= m
    return out


def make_high_order(base_order: int) -> KernelSpec:
    """Gaussian-polynomial kernel with moments vanishing up to base_order-1.

    Solves ``sum_k c_k m_(2(k+i)) = delta_(i0)`` for i = 0..m-1 where
    ``m_(2k)`` are standard normal even moments, then verifies the moment
    identities by quadrature.  Odd moments vanish by symmetry.
    """
    if base_order < 4 or base_order % 2 != 0:
        raise InvalidKernelOrder(
            f"high-order construction needs an even order >= 4, got {base_order}"
        )
    m = base_order // 2
    a = np.empty((m, m))
    for i in range(m):
        for k in range(m):
            a[i, k] = _gaussian_even_moment(i + k)
    rhs = np.zeros(m)
    rhs[0] = 1.0
    coef = np.linalg.solve(a, rhs)
    spec = KernelSpec(
        name=f"gaussian{base_order}",
        order=base_order,
        compact=False,
        poly=tuple(float(c) for c in coef),
    )
    _verify_moments(spec)
    return spec


def _verify_moments(spec: KernelSpec, tol: float = 1e-8) -> None:
    mu0 = spec.moment_mu(0)
    if abs(mu0 - 1.0) > tol:
        raise InvalidKernelOrder(f"{spec.name}: int K = {mu0}, expected 1")
    for j in range(1, spec.order):
        mu = spec.moment_mu(j)
        if abs(mu) > tol:
            raise InvalidKernelOrder(f"{spec.name}: moment {j} = {mu}, expected 0")


_REGISTRY: dict[str, KernelSpec] = {}


def kernel(name: str) -> KernelSpec:
    """Look up a kernel by registry name.

    Known names: "epanechnikov", "gaussian", and "gaussianN" for even
    N >= 4 (e.g. "gaussian4", "gaussian6").
    """
    key = name.strip().lower()
    if key in _REGISTRY:
        return _REGISTRY[key]
    if key in ("epanechnikov", "epan"):
        spec = KernelSpec(name="epanechnikov", order=2, compact=True, poly=None)
    elif key == "gaussian":
        spec = KernelSpec(name="gaussian", order=2, compact=False, poly=(1.0,))
    elif key.startswith("gaussian"):
        try:
            order = int(key[len("gaussian") :])
        except ValueError:
            raise InvalidKernelOrder(f"unknown kernel name {name!r}") from None
        spec = make_high_order(order)
    else:
        raise InvalidKernelOrder(f"unknown kernel name {name!r}")
    _verify_moments(spec)
    _REGISTRY[key] = spec
    return spec
