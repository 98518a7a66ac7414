"""Doubly robust pseudo-outcomes and three-fold cross-fitted curve estimation.

The pseudo-outcome for an observation O = (X, Z, W) is

    xi(O) = (W - s_hat(X, Z)) * f_hat(Z) / pi_hat(Z | X) + t0_hat(Z)

with W the regressed variable (Y or A), s_hat the matching regression
surface, f_hat the fold-averaged marginal density, and t0_hat the
fold-averaged initial curve.  Regressing xi on Z with a local polynomial
gives the dose-response value (first coefficient) and its derivative
(second coefficient over h); the conditional mean of xi given Z is the
target curve whenever either nuisance is correct.

Cross-fitting uses three disjoint folds per rotation: one trains the
nuisances, one builds the marginals, one is regressed.  With rotation
enabled the three rotations' estimates are averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from . import localpoly
from .data import Dataset
from .errors import ContivError, FoldOverlap, NonFiniteResult
from .kernels import KernelSpec, kernel as get_kernel
from .nuisance import (
    MarginalFit,
    NuisanceFit,
    fit_propensity_residual_kde,
    fit_regression,
    marginals_from,
    synthetic_nuisance,
)

__all__ = [
    "FoldScheme",
    "PseudoSample",
    "CurveConfig",
    "CurveEstimate",
    "NuisanceSource",
    "SyntheticSource",
    "WrongSource",
    "LearnerSource",
    "FixedSource",
    "pseudo_outcomes",
    "build_rotations",
    "curve_from_rotations",
    "crossfit_curve",
    "crossfit_curves",
    "boundary_curve",
]

FLAG_OK = "ok"
FLAG_PARTIAL = "partial"
FLAG_MISSING = "window"


@dataclass(frozen=True)
class FoldScheme:
    nuisance: int
    marginal: int
    regression: int


@dataclass(frozen=True)
class PseudoSample:
    """Pseudo-outcomes for one regression fold."""

    z: np.ndarray
    xi: np.ndarray
    target: str
    fold_scheme: FoldScheme
    idx: np.ndarray

    def __post_init__(self):
        if self.z.shape != self.xi.shape:
            raise ValueError("z and xi must align")


def pseudo_outcomes(
    data: Dataset,
    idx: np.ndarray,
    nuisance: NuisanceFit,
    marginals: MarginalFit,
    target: str,
    scheme: FoldScheme | None = None,
) -> PseudoSample:
    """Construct xi for the observations ``idx`` (the regression fold).

    Raises FoldOverlap when the regression fold coincides with the fold
    that trained the nuisances or built the marginals, and
    NonFiniteResult if any pseudo-outcome is NaN or infinite.
    """
    idx = np.asarray(idx)
    labels = np.unique(data.fold[idx])
    reg_label = int(labels[0]) if labels.size == 1 and labels[0] >= 0 else None
    if reg_label is not None:
        for other in (nuisance.training_fold, marginals.source_fold):
            if other is not None and other == reg_label:
                raise FoldOverlap(
                    f"regression fold {reg_label} overlaps a nuisance/marginal fold"
                )

    x = data.x[idx]
    z = data.z[idx]
    w = data.outcome(target)[idx]
    surf = nuisance.surface(target)
    resid = w - surf.evaluate(x, z)
    dens = nuisance.pi.density(x, z)
    xi = resid * marginals.f(z) / dens + marginals.curve0(target)(z)
    if not np.all(np.isfinite(xi)):
        raise NonFiniteResult("pseudo-outcome is not finite despite clipping")
    if scheme is None:
        scheme = FoldScheme(nuisance=-1, marginal=-1, regression=reg_label if reg_label is not None else -1)
    return PseudoSample(z=z, xi=xi, target=target, fold_scheme=scheme, idx=idx)


# ---------------------------------------------------------------------------
# nuisance sources
# ---------------------------------------------------------------------------


class NuisanceSource:
    """Strategy for producing a NuisanceFit from a training fold."""

    def fit(self, data: Dataset, idx, fold_label, rng, targets) -> NuisanceFit:
        raise NotImplementedError


@dataclass
class SyntheticSource(NuisanceSource):
    """Truth-based surfaces with rate-controlled error (alpha=None: exact)."""

    dgp: object
    alpha: float | None = None
    clip_bounds: tuple[float, float] = (0.01, 100.0)

    def fit(self, data, idx, fold_label, rng, targets):
        if self.alpha is None:
            nf = self.dgp.true_nuisance(self.clip_bounds)
        else:
            nf = synthetic_nuisance(self.dgp, self.alpha, data.n, rng)
        return replace_training_fold(nf, fold_label)


@dataclass
class WrongSource(NuisanceSource):
    """Truth with one surface's coefficients doubled ("pi" or "mu"/"lam")."""

    dgp: object
    which: str

    def fit(self, data, idx, fold_label, rng, targets):
        return replace_training_fold(self.dgp.wrong_nuisance(self.which), fold_label)


@dataclass
class LearnerSource(NuisanceSource):
    """Data-fitted nuisances: regression learners plus residual-KDE propensity."""

    outcome_learner: str = "linear"
    treatment_learner: str = "linear"
    propensity: str = "residual_kde"
    clip_bounds: tuple[float, float] = (0.01, 100.0)

    def fit(self, data, idx, fold_label, rng, targets):
        mu = lam = None
        if "outcome" in targets:
            mu = fit_regression(data, idx, "outcome", self.outcome_learner, rng)
        if "treatment" in targets:
            lam = fit_regression(data, idx, "treatment", self.treatment_learner, rng)
        if self.propensity != "residual_kde":
            raise ValueError(f"unknown propensity learner {self.propensity!r}")
        pi = fit_propensity_residual_kde(data, idx, clip_bounds=self.clip_bounds)
        return NuisanceFit(pi=pi, mu=mu, lam=lam, training_fold=fold_label)


@dataclass
class FixedSource(NuisanceSource):
    """Use a prebuilt NuisanceFit on every rotation (tests, oracles)."""

    nuisance: NuisanceFit

    def fit(self, data, idx, fold_label, rng, targets):
        return replace_training_fold(self.nuisance, fold_label)


def replace_training_fold(nf: NuisanceFit, fold_label) -> NuisanceFit:
    return NuisanceFit(pi=nf.pi, mu=nf.mu, lam=nf.lam, training_fold=fold_label)


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------


@dataclass
class CurveConfig:
    """Settings shared by the cross-fitted curve estimators."""

    h: float = 0.5
    p: int = 2
    kernel: str | KernelSpec = "epanechnikov"
    grid: int | np.ndarray = 50
    trim: tuple[float, float] = (0.05, 0.95)
    rotate: bool = True
    marginal_grid: int = 512
    keep_influence: bool = False
    with_stderr: bool = True
    seed: int | None = 0

    def kernel_spec(self) -> KernelSpec:
        return self.kernel if isinstance(self.kernel, KernelSpec) else get_kernel(self.kernel)

    def resolve_grid(self, z: np.ndarray) -> np.ndarray:
        if isinstance(self.grid, (int, np.integer)):
            lo, hi = np.quantile(z, self.trim)
            return np.linspace(lo, hi, int(self.grid))
        return np.asarray(self.grid, dtype=float)


@dataclass
class CurveEstimate:
    """Grid of point estimates with standard errors and diagnostics."""

    grid: np.ndarray
    value: np.ndarray
    deriv: np.ndarray
    value_stderr: np.ndarray | None
    deriv_stderr: np.ndarray | None
    f_hat: np.ndarray
    n_local: np.ndarray
    flag: list[str]
    h: float
    p: int
    kernel_name: str
    method: str
    target: str
    n: int
    rotations: int
    influence: np.ndarray | None = field(default=None, repr=False)
    influence_idx: np.ndarray | None = field(default=None, repr=False)

    def ci(self, quantity: str = "deriv", level: float = 0.95):
        est = getattr(self, quantity)
        se = getattr(self, f"{quantity}_stderr")
        zq = norm.ppf(0.5 + level / 2.0)
        return est - zq * se, est + zq * se

    def to_rows(self, quantity: str = "value", level: float = 0.95) -> list[dict]:
        est = getattr(self, quantity)
        se = getattr(self, f"{quantity}_stderr")
        rows = []
        for j, z0 in enumerate(self.grid):
            lo = hi = sej = float("nan")
            if se is not None:
                sej = float(se[j])
                zq = norm.ppf(0.5 + level / 2.0)
                lo, hi = float(est[j] - zq * sej), float(est[j] + zq * sej)
            rows.append(
                {
                    "z0": float(z0),
                    "estimate": float(est[j]),
                    "stderr": sej,
                    "ci_lo": lo,
                    "ci_hi": hi,
                    "n_local": int(self.n_local[j]),
                    "flag": self.flag[j],
                }
            )
        return rows


@dataclass
class RotationParts:
    scheme: FoldScheme
    nuisance: NuisanceFit
    marginals: MarginalFit
    pseudo: dict[str, PseudoSample]
    reg_idx: np.ndarray


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


def build_rotations(
    data: Dataset, targets: tuple[str, ...], source: NuisanceSource, config: CurveConfig
) -> tuple[Dataset, list[RotationParts]]:
    """Split the data and construct pseudo-outcomes for every rotation."""
    rng = np.random.default_rng(config.seed)
    if np.any(data.fold < 0) or np.unique(data.fold).size != 3:
        data = data.with_folds(3, rng)
    rotations = []
    n_rot = 3 if config.rotate else 1
    for r in range(n_rot):
        scheme = FoldScheme(nuisance=r % 3, marginal=(r + 1) % 3, regression=(r + 2) % 3)
        nuis_idx = data.fold_indices(scheme.nuisance)
        marg_idx = data.fold_indices(scheme.marginal)
        reg_idx = data.fold_indices(scheme.regression)
        nf = source.fit(data, nuis_idx, scheme.nuisance, rng, targets)
        mg = marginals_from(nf, data, marg_idx, grid_points=config.marginal_grid)
        pseudo = {
            t: pseudo_outcomes(data, reg_idx, nf, mg, t, scheme) for t in targets
        }
        rotations.append(
            RotationParts(scheme=scheme, nuisance=nf, marginals=mg, pseudo=pseudo, reg_idx=reg_idx)
        )
    return data, rotations


def _lp_influence(ps: PseudoSample, xreg, surface, lpfit) -> np.ndarray:
    """Per-observation linear-expansion influence of the derivative estimate."""
    h, z0, p = lpfit.h, lpfit.z0, lpfit.p
    u = (ps.z - z0) / h
    kh = lpfit.kernel.localized(ps.z, z0, h)
    basis = u[:, None] ** np.arange(p + 1)[None, :]
    e2 = np.zeros(p + 1)
    e2[1] = 1.0
    c = cho_solve(cho_factor(lpfit.dhat), e2)
    cg = basis @ c
    phi1 = cg * kh * (ps.xi - basis @ lpfit.beta) / h

    a = cg * kh / (h * len(ps.z))
    terms = surface.tensor_terms()
    if terms is not None:
        phi_fn, psi_fn = terms
        weights = psi_fn(ps.z).T @ a
        phi2 = phi_fn(xreg) @ weights
    else:
        live = np.flatnonzero(a != 0.0)
        phi2 = np.zeros(len(ps.z))
        step = max(1, 1_000_000 // max(1, live.size))
        for start in range(0, xreg.shape[0], step):
            block = slice(start, start + step)
            vals = surface.evaluate_grid(xreg[block], ps.z[live])
            phi2[block] = vals @ a[live]
    theta_rot = lpfit.beta[1] / h
    return phi1 + phi2 - theta_rot


def curve_from_rotations(
    data: Dataset,
    rotations: list[RotationParts],
    target: str,
    config: CurveConfig,
    grid: np.ndarray | None = None,
) -> CurveEstimate:
    """Run the local polynomial stage on prebuilt rotations."""
    spec = config.kernel_spec()
    grid = config.resolve_grid(data.z) if grid is None else np.asarray(grid, dtype=float)
    n_rot = len(rotations)
    g = len(grid)

    val = np.full((n_rot, g), np.nan)
    der = np.full((n_rot, g), np.nan)
    rvar = np.full((n_rot, g), np.nan)
    fhat = np.full((n_rot, g), np.nan)
    nloc = np.zeros((n_rot, g), dtype=int)
    influence = None
    infl_idx = None
    if config.keep_influence:
        infl_idx = np.concatenate([rot.reg_idx for rot in rotations])
        influence = np.full((len(infl_idx), g), np.nan)

    zmin, zmax = float(np.min(data.z)), float(np.max(data.z))
    offset = 0
    for r, rot in enumerate(rotations):
        ps = rot.pseudo[target]
        n_reg = len(ps.z)
        for j, z0 in enumerate(grid):
            try:
                lf = localpoly.fit(ps.z, ps.xi, z0, config.h, config.p, spec)
            except ContivError:
                continue
            val[r, j] = localpoly.value(lf)
            der[r, j] = localpoly.derivative(lf)
            rvar[r, j] = lf.residual_variance
            nloc[r, j] = lf.n_local
            fhat[r, j] = rot.marginals.f(np.array([z0]))[0]
            if config.keep_influence:
                influence[offset : offset + n_reg, j] = _lp_influence(
                    ps, data.x[rot.reg_idx], rot.nuisance.surface(target), lf
                )
        offset += n_reg

    with np.errstate(invalid="ignore"):
        value = np.nanmean(val, axis=0)
        deriv = np.nanmean(der, axis=0)
        res_var = np.nanmean(rvar, axis=0)
        f_bar = np.nanmean(fhat, axis=0)
    n_ok = np.sum(~np.isnan(val), axis=0)
    flags = [
        FLAG_OK if k == n_rot else (FLAG_PARTIAL if k > 0 else FLAG_MISSING) for k in n_ok
    ]

    value_se = deriv_se = None
    if config.with_stderr:
        value_se = np.full(g, np.nan)
        deriv_se = np.full(g, np.nan)
        r_eff = spec.window_radius
        n_reg_total = sum(len(rot.reg_idx) for rot in rotations)
        for j, z0 in enumerate(grid):
            if n_ok[j] == 0 or not np.isfinite(f_bar[j]) or f_bar[j] <= 0:
                continue
            lo = max(-r_eff, (zmin - z0) / config.h)
            hi = min(r_eff, (zmax - z0) / config.h)
            v = localpoly.v_matrix_for(spec, config.p, (lo, hi))
            n_eff = n_reg_total * n_ok[j] / n_rot
            value_se[j] = np.sqrt(res_var[j] * v[0, 0] / (f_bar[j] * n_eff * config.h))
            deriv_se[j] = np.sqrt(res_var[j] * v[1, 1] / (f_bar[j] * n_eff * config.h**3))

    return CurveEstimate(
        grid=grid,
        value=value,
        deriv=deriv,
        value_stderr=value_se,
        deriv_stderr=deriv_se,
        f_hat=f_bar,
        n_local=nloc.sum(axis=0),
        flag=flags,
        h=config.h,
        p=config.p,
        kernel_name=spec.name,
        method="localpoly",
        target=target,
        n=data.n,
        rotations=n_rot,
        influence=influence,
        influence_idx=infl_idx,
    )


def crossfit_curves(
    data: Dataset, targets: tuple[str, ...], source: NuisanceSource, config: CurveConfig
) -> dict[str, CurveEstimate]:
    """Cross-fitted curves for several targets sharing one fold scheme."""
    folded, rotations = build_rotations(data, targets, source, config)
    grid = config.resolve_grid(folded.z)
    return {t: curve_from_rotations(folded, rotations, t, config, grid) for t in targets}


def crossfit_curve(
    data: Dataset, target: str, source: NuisanceSource, config: CurveConfig
) -> CurveEstimate:
    """Cross-fitted dose-response value and derivative on a grid."""
    return crossfit_curves(data, (target,), source, config)[target]


def boundary_curve(
    data: Dataset, target: str, source: NuisanceSource, z0: float, config: CurveConfig
) -> CurveEstimate:
    """Point estimate at a support edge via the one-sided kernel window."""
    return crossfit_curves(
        data, (target,), source, replace(config, grid=np.array([float(z0)]))
    )[target]
