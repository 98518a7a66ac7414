"""Simulation data-generating processes with analytic truth handles.

Two Gaussian-instrument designs drive the simulation studies: a full
IV design ("liv-main", continuous treatment index, cubic outcome trend)
and a derivative-only design ("deriv-only", no treatment arm, outcome
noise variance 4).  A bounded-instrument design ("complier") exercises
boundary estimation on Z in [0, 1].

Each process exposes exact nuisance surfaces, rate-controlled
perturbations of them (errors of stochastic order n^-alpha), and
deliberately wrong surfaces (all coefficients doubled) for
double-robustness experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .nuisance import (
    DEFAULT_CLIP,
    GaussianPropensity,
    NuisanceFit,
    PolyIvSurface,
    UniformPropensity,
)

__all__ = ["GaussianIvDgp", "ComplierDgp", "LIV_MAIN", "DERIV_ONLY", "COMPLIER", "get_dgp"]


@dataclass(frozen=True)
class GaussianIvDgp:
    """X ~ N(0, I_d); Z | X ~ N(eta0 + X eta, 1); linear-index A; cubic-in-Z Y."""

    name: str
    eta0: float
    eta: tuple[float, ...]
    mu0: float
    mux: tuple[float, ...]
    muc0: float
    mucx: tuple[float, ...]
    muc3: float
    y_sd: float
    lam0: float | None = None
    lamx: tuple[float, ...] | None = None
    lamz: float | None = None
    a_sd: float = 1.0

    @property
    def d(self) -> int:
        return len(self.eta)

    @property
    def has_treatment(self) -> bool:
        return self.lam0 is not None

    # -- sampling ---------------------------------------------------------

    def generate(self, n: int, rng: np.random.Generator) -> Dataset:
        x = rng.standard_normal((n, self.d))
        z = self.eta0 + x @ np.asarray(self.eta) + rng.standard_normal(n)
        if self.has_treatment:
            a = self._lam_surface().evaluate(x, z) + self.a_sd * rng.standard_normal(n)
        else:
            a = np.zeros(n)
        y = self._mu_surface().evaluate(x, z) + self.y_sd * rng.standard_normal(n)
        return Dataset.from_arrays(x=x, z=z, a=a, y=y)

    # -- analytic truths ----------------------------------------------------

    def tau(self, z):
        z = np.asarray(z, dtype=float)
        return self.mu0 + self.muc0 * z + self.muc3 * z**3

    def theta_y(self, z):
        z = np.asarray(z, dtype=float)
        return self.muc0 + 3.0 * self.muc3 * z**2

    def delta(self, z):
        z = np.asarray(z, dtype=float)
        return self.lam0 + self.lamz * z

    def theta_a(self, z):
        return np.full_like(np.asarray(z, dtype=float), self.lamz)

    def gamma(self, z):
        return self.theta_y(z) / self.lamz

    def truth(self, estimand: str):
        return {
            "tau": self.tau,
            "theta_y": self.theta_y,
            "delta": self.delta,
            "theta_a": self.theta_a,
            "gamma": self.gamma,
        }[estimand]

    @property
    def z_mean(self) -> float:
        return self.eta0

    @property
    def z_sd(self) -> float:
        return float(np.sqrt(1.0 + np.sum(np.asarray(self.eta) ** 2)))

    def z_pdf(self, z):
        return norm.pdf(np.asarray(z, dtype=float), loc=self.z_mean, scale=self.z_sd)

    def z_quantile(self, q) -> float:
        return float(norm.ppf(q, loc=self.z_mean, scale=self.z_sd))

    # -- nuisance surfaces ---------------------------------------------------

    def _mu_surface(self, scale_all: float = 1.0, c3_factor: float = 1.0) -> PolyIvSurface:
        return PolyIvSurface(
            m0=self.mu0 * scale_all,
            mx=tuple(scale_all * c for c in self.mux),
            c0=self.muc0 * scale_all,
            cx=tuple(scale_all * c for c in self.mucx),
            c3=self.muc3 * scale_all * c3_factor,
        )

    def _lam_surface(self, scale_all: float = 1.0, shift: float = 0.0) -> PolyIvSurface:
        return PolyIvSurface(
            m0=self.lam0 * scale_all + shift,
            mx=tuple(scale_all * c for c in self.lamx),
            c0=self.lamz * scale_all,
        )

    def true_nuisance(self, clip_bounds=DEFAULT_CLIP) -> NuisanceFit:
        return NuisanceFit(
            pi=GaussianPropensity(self.eta0, self.eta, sd=1.0, clip_bounds=clip_bounds),
            mu=self._mu_surface(),
            lam=self._lam_surface() if self.has_treatment else None,
            training_fold=None,
        )

    def perturbed_nuisance(
        self, alpha: float | None, n: int, rng: np.random.Generator, clip_bounds=DEFAULT_CLIP
    ) -> NuisanceFit:
        """Truth plus N(n^-alpha, n^-2alpha) perturbations.

        The instrument-mean and treatment surfaces receive additive
        shifts; the outcome surface has its cubic coefficient scaled by
        (1 + draw).  ``alpha=None`` returns the exact truth.
        """
        if alpha is None:
            return self.true_nuisance(clip_bounds)
        scale = float(n) ** (-float(alpha))
        d_eta = rng.normal(scale, scale)
        d_lam = rng.normal(scale, scale) if self.has_treatment else 0.0
        d_mu = rng.normal(scale, scale)
        pi = GaussianPropensity(self.eta0 + d_eta, self.eta, sd=1.0, clip_bounds=clip_bounds)
        lam = self._lam_surface(shift=d_lam) if self.has_treatment else None
        mu = self._mu_surface(c3_factor=1.0 + d_mu)
        return NuisanceFit(pi=pi, mu=mu, lam=lam, training_fold=None)

    def wrong_nuisance(self, which: str, clip_bounds=DEFAULT_CLIP) -> NuisanceFit:
        """Truth with the named surface's coefficients all doubled."""
        pi_args = (self.eta0, self.eta)
        mu = self._mu_surface()
        lam = self._lam_surface() if self.has_treatment else None
        if which == "pi":
            pi_args = (2.0 * self.eta0, tuple(2.0 * e for e in self.eta))
        elif which == "mu":
            mu = self._mu_surface(scale_all=2.0)
        elif which == "lam":
            lam = self._lam_surface(scale_all=2.0)
        else:
            raise ValueError(f"unknown nuisance name {which!r}")
        return NuisanceFit(
            pi=GaussianPropensity(*pi_args, sd=1.0, clip_bounds=clip_bounds),
            mu=mu,
            lam=lam,
            training_fold=None,
        )


@dataclass(frozen=True)
class ComplierDgp:
    """Bounded instrument Z ~ U[0, 1], Bernoulli treatment, linear outcome."""

    name: str = "complier"
    d: int = 2
    lam0: float = 0.2
    lamz: float = 0.5
    mu0: float = 1.0
    muz: float = 1.0
    y_sd: float = 1.0

    has_treatment = True

    def generate(self, n: int, rng: np.random.Generator) -> Dataset:
        x = rng.standard_normal((n, self.d))
        z = rng.uniform(0.0, 1.0, size=n)
        a = (rng.uniform(size=n) < self.lam0 + self.lamz * z).astype(float)
        y = self.mu0 + self.muz * z + self.y_sd * rng.standard_normal(n)
        return Dataset.from_arrays(x=x, z=z, a=a, y=y)

    def tau(self, z):
        z = np.asarray(z, dtype=float)
        return self.mu0 + self.muz * z

    def delta(self, z):
        z = np.asarray(z, dtype=float)
        return self.lam0 + self.lamz * z

    @property
    def proportion(self) -> float:
        return self.lamz

    @property
    def late(self) -> float:
        return self.muz / self.lamz

    def true_nuisance(self, clip_bounds=DEFAULT_CLIP) -> NuisanceFit:
        zeros = (0.0,) * self.d
        return NuisanceFit(
            pi=UniformPropensity(0.0, 1.0, clip_bounds=clip_bounds),
            mu=PolyIvSurface(m0=self.mu0, mx=zeros, c0=self.muz),
            lam=PolyIvSurface(m0=self.lam0, mx=zeros, c0=self.lamz),
            training_fold=None,
        )

    def perturbed_nuisance(self, alpha, n, rng, clip_bounds=DEFAULT_CLIP) -> NuisanceFit:
        if alpha is None:
            return self.true_nuisance(clip_bounds)
        scale = float(n) ** (-float(alpha))
        d_lam = rng.normal(scale, scale)
        d_mu = rng.normal(scale, scale)
        zeros = (0.0,) * self.d
        return NuisanceFit(
            pi=UniformPropensity(0.0, 1.0, clip_bounds=clip_bounds),
            mu=PolyIvSurface(m0=self.mu0, mx=zeros, c0=self.muz * (1.0 + d_mu)),
            lam=PolyIvSurface(m0=self.lam0 + d_lam, mx=zeros, c0=self.lamz),
            training_fold=None,
        )


LIV_MAIN = GaussianIvDgp(
    name="liv-main",
    eta0=2.0,
    eta=(0.1, 0.1, -0.1, 0.2),
    mu0=1.0,
    mux=(0.2, 0.2, 0.3, -0.1),
    muc0=0.0,
    mucx=(-0.1, 0.0, 0.1, 0.0),
    muc3=-(0.13**2),
    y_sd=1.0,
    lam0=1.0,
    lamx=(0.1, -0.2, 0.3, 0.1),
    lamz=0.1,
    a_sd=1.0,
)

DERIV_ONLY = GaussianIvDgp(
    name="deriv-only",
    eta0=-0.8,
    eta=(0.1, 0.1, -0.1, 0.2),
    mu0=1.0,
    mux=(0.2, 0.2, 0.3, -0.1),
    muc0=0.1,
    mucx=(-0.1, 0.0, 0.1, 0.0),
    muc3=-(0.13**2),
    y_sd=2.0,
)

COMPLIER = ComplierDgp()

_DGPS = {d.name: d for d in (LIV_MAIN, DERIV_ONLY, COMPLIER)}


def get_dgp(name: str):
    try:
        return _DGPS[name]
    except KeyError:
        raise ValueError(f"unknown DGP {name!r}; known: {sorted(_DGPS)}") from None
