"""Nuisance surfaces: instrument propensity, outcome and treatment regressions.

Fitted surfaces are immutable evaluables.  Regression surfaces expose an
optional tensor decomposition ``value(x, z) = phi(x) @ psi(z)`` that the
estimation code uses to evaluate fold averages and kernel integrals
without materializing observation-by-gridpoint matrices.

Propensity evaluations are always clipped into ``clip_bounds`` so that
downstream ratios stay bounded; a counter records how often clipping
fired.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import EmptyFold, FoldOverlap, FoldTooSmall, InvalidRate, RankDeficientDesign

__all__ = [
    "RegressionSurface",
    "PolyIvSurface",
    "PartialLinearSurface",
    "KernelRidgeSurface",
    "PropensitySurface",
    "GaussianPropensity",
    "UniformPropensity",
    "ResidualKdePropensity",
    "NuisanceFit",
    "MarginalFit",
    "fit_regression",
    "fit_propensity_residual_kde",
    "synthetic_nuisance",
    "marginals_from",
    "silverman_bandwidth",
]

DEFAULT_CLIP = (0.01, 100.0)
_VARIANCE_FLOOR = 1e-6
_SQRT_2PI = np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# regression surfaces
# ---------------------------------------------------------------------------


class RegressionSurface:
    """Evaluable conditional-mean surface (x, z) -> real."""

    def evaluate(self, x: np.ndarray, z) -> np.ndarray:
        """Row-wise values; z is a scalar or an array matching x rows."""
        raise NotImplementedError

    def evaluate_grid(self, x: np.ndarray, zgrid: np.ndarray) -> np.ndarray:
        """Matrix of values, rows indexing x and columns indexing zgrid."""
        terms = self.tensor_terms()
        if terms is not None:
            phi, psi = terms
            return phi(x) @ psi(np.asarray(zgrid, dtype=float)).T
        x = np.asarray(x, dtype=float)
        zgrid = np.asarray(zgrid, dtype=float)
        out = np.empty((x.shape[0], zgrid.shape[0]))
        for j, zj in enumerate(zgrid):
            out[:, j] = self.evaluate(x, zj)
        return out

    def tensor_terms(self):
        """Optional (phi, psi) with value(x, z) = phi(x) @ psi(z); None if unavailable."""
        return None


@dataclass(frozen=True)
class PolyIvSurface(RegressionSurface):
    """m0 + x @ mx + z * (c0 + x @ cx) + c3 * z^3.

    Covers the linear-in-(x, z) learner (c3 = 0, cx = 0) and the
    synthetic simulation surfaces.
    """

    m0: float
    mx: tuple[float, ...]
    c0: float = 0.0
    cx: tuple[float, ...] | None = None
    c3: float = 0.0

    def _slope(self, x: np.ndarray) -> np.ndarray:
        s = np.full(x.shape[0], self.c0)
        if self.cx is not None:
            s = s + x @ np.asarray(self.cx)
        return s

    def evaluate(self, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.asarray(z, dtype=float)
        base = self.m0 + x @ np.asarray(self.mx)
        return base + z * self._slope(x) + self.c3 * z**3

    def tensor_terms(self):
        def phi(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            cols = [
                self.m0 + x @ np.asarray(self.mx),
                self._slope(x),
                np.full(x.shape[0], self.c3),
            ]
            return np.column_stack(cols)

        def psi(z):
            z = np.asarray(z, dtype=float)
            return np.column_stack([np.ones_like(z), z, z**3])

        return phi, psi

    def z_derivative(self, x, z):
        """Analytic d/dz of the surface (used by plug-in baselines)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.asarray(z, dtype=float)
        return self._slope(x) + 3.0 * self.c3 * z**2


@dataclass(frozen=True)
class PartialLinearSurface(RegressionSurface):
    """g(z) + x @ bx with g a local-linear smooth stored on a grid."""

    bx: tuple[float, ...]
    zgrid: np.ndarray
    gvals: np.ndarray
    gslope_lo: float
    gslope_hi: float

    def _g(self, z):
        z = np.asarray(z, dtype=float)
        lo, hi = self.zgrid[0], self.zgrid[-1]
        inner = np.interp(np.clip(z, lo, hi), self.zgrid, self.gvals)
        below = np.minimum(z - lo, 0.0) * self.gslope_lo
        above = np.maximum(z - hi, 0.0) * self.gslope_hi
        return inner + below + above

    def evaluate(self, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self._g(z) + x @ np.asarray(self.bx)

    def tensor_terms(self):
        def phi(x):
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return np.column_stack([np.ones(x.shape[0]), x @ np.asarray(self.bx)])

        def psi(z):
            z = np.asarray(z, dtype=float)
            return np.column_stack([self._g(z), np.ones_like(z)])

        return phi, psi


class KernelRidgeSurface(RegressionSurface):
    """RBF kernel ridge fit on standardized (x, z) features."""

    def __init__(self, model, center: np.ndarray, scale: np.ndarray):
        self._model = model
        self._center = center
        self._scale = scale

    def evaluate(self, x, z):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        feats = (np.column_stack([x, z]) - self._center) / self._scale
        return self._model.predict(feats)

    def evaluate_grid(self, x, zgrid):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        zgrid = np.asarray(zgrid, dtype=float)
        out = np.empty((x.shape[0], zgrid.shape[0]))
        for j, zj in enumerate(zgrid):
            out[:, j] = self.evaluate(x, zj)
        return out


# ---------------------------------------------------------------------------
# propensity surfaces
# ---------------------------------------------------------------------------


class PropensitySurface:
    """Conditional density of Z given X, clipped into ``clip_bounds``."""

    clip_bounds: tuple[float, float] = DEFAULT_CLIP

    def __init__(self, clip_bounds: tuple[float, float] = DEFAULT_CLIP):
        self.clip_bounds = clip_bounds
        self._clip_events = 0

    @property
    def clip_events(self) -> int:
        return self._clip_events

    def _raw(self, x: np.ndarray, z) -> np.ndarray:
        raise NotImplementedError

    def _clip(self, vals: np.ndarray) -> np.ndarray:
        lo, hi = self.clip_bounds
        clipped = np.clip(vals, lo, hi)
        self._clip_events += int(np.count_nonzero(clipped != vals))
        return clipped

    def density(self, x, z) -> np.ndarray:
        return self._clip(self._raw(np.atleast_2d(np.asarray(x, dtype=float)), z))

    def density_grid(self, x, zgrid) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        zgrid = np.asarray(zgrid, dtype=float)
        out = np.empty((x.shape[0], zgrid.shape[0]))
        for j, zj in enumerate(zgrid):
            out[:, j] = self.density(x, zj)
        return out


class GaussianPropensity(PropensitySurface):
    """Z | X ~ N(e0 + x @ ex, sd^2)."""

    def __init__(self, e0: float, ex, sd: float = 1.0, clip_bounds=DEFAULT_CLIP):
        super().__init__(clip_bounds)
        self.e0 = float(e0)
        self.ex = np.asarray(ex, dtype=float)
        self.sd = float(sd)

    def _raw(self, x, z):
        u = (np.asarray(z, dtype=float) - (self.e0 + x @ self.ex)) / self.sd
        return np.exp(-0.5 * u * u) / (_SQRT_2PI * self.sd)

    def density_grid(self, x, zgrid):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        zgrid = np.asarray(zgrid, dtype=float)
        u = (zgrid[None, :] - (self.e0 + x @ self.ex)[:, None]) / self.sd
        return self._clip(np.exp(-0.5 * u * u) / (_SQRT_2PI * self.sd))


class UniformPropensity(PropensitySurface):
    """Z uniform on [lo, hi], independent of X."""

    def __init__(self, lo: float = 0.0, hi: float = 1.0, clip_bounds=DEFAULT_CLIP):
        super().__init__(clip_bounds)
        self.lo = float(lo)
        self.hi = float(hi)

    def _raw(self, x, z):
        z = np.broadcast_to(np.asarray(z, dtype=float), (x.shape[0],))
        inside = (z >= self.lo) & (z <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)


class ResidualKdePropensity(PropensitySurface):
    """KDE of standardized residuals: pi(z|x) = g((z - m(x)) / s(x)) / s(x)."""

    def __init__(self, mean_fn, sd_fn, grid, gvals, clip_bounds=DEFAULT_CLIP):
        super().__init__(clip_bounds)
        self._mean_fn = mean_fn
        self._sd_fn = sd_fn
        self._grid = grid
        self._gvals = gvals

    def _std_density(self, r):
        return np.interp(r, self._grid, self._gvals, left=0.0, right=0.0)

    def _raw(self, x, z):
        m = self._mean_fn(x)
        s = self._sd_fn(x)
        z = np.broadcast_to(np.asarray(z, dtype=float), m.shape)
        return self._std_density((z - m) / s) / s

    def density_grid(self, x, zgrid):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = self._mean_fn(x)[:, None]
        s = self._sd_fn(x)[:, None]
        r = (np.asarray(zgrid, dtype=float)[None, :] - m) / s
        return self._clip(self._std_density(r) / s)


# ---------------------------------------------------------------------------
# fitted nuisance bundle
# ---------------------------------------------------------------------------


@dataclass
class NuisanceFit:
    """Propensity plus outcome/treatment regressions from one training fold."""

    pi: PropensitySurface
    mu: RegressionSurface | None = None
    lam: RegressionSurface | None = None
    training_fold: int | None = None

    @property
    def clip_bounds(self) -> tuple[float, float]:
        return self.pi.clip_bounds

    def surface(self, target: str) -> RegressionSurface:
        s = self.mu if target == "outcome" else self.lam
        if s is None:
            raise ValueError(f"nuisance fit has no {target} surface")
        return s


# ---------------------------------------------------------------------------
# learners
# ---------------------------------------------------------------------------


def _ols(design: np.ndarray, resp: np.ndarray) -> np.ndarray:
    coef, _, rank, _ = np.linalg.lstsq(design, resp, rcond=None)
    if rank < design.shape[1]:
        raise RankDeficientDesign(
            f"design has rank {rank} < {design.shape[1]} columns"
        )
    return coef


def silverman_bandwidth(v: np.ndarray) -> float:
    """Silverman's rule: 0.9 min(sd, iqr/1.34) n^(-1/5)."""
    sd = float(np.std(v))
    iqr = float(np.subtract(*np.percentile(v, [75, 25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * len(v) ** (-0.2)


_silverman = silverman_bandwidth


def fit_regression(data, idx, target: str, learner: str = "linear", rng=None) -> RegressionSurface:
    """Fit mu-hat (target="outcome") or lambda-hat (target="treatment").

    Learners: "linear" (OLS on [1, X, Z]), "local_linear" (linear in X
    plus a local-linear smooth in Z), "kernel_ridge" (RBF kernel ridge
    on standardized features, trained on a seeded subsample).
    """
    idx = np.asarray(idx)
    if idx.size == 0:
        raise EmptyFold("cannot fit a regression on an empty fold")
    x = data.x[idx]
    z = data.z[idx]
    w = data.outcome(target)[idx]

    if learner == "linear":
        design = np.column_stack([np.ones(len(z)), x, z])
        coef = _ols(design, w)
        return PolyIvSurface(m0=float(coef[0]), mx=tuple(coef[1:-1]), c0=float(coef[-1]))

    if learner == "local_linear":
        design = np.column_stack([np.ones(len(z)), x, z])
        coef = _ols(design, w)
        bx = coef[1 : 1 + x.shape[1]]
        resid = w - x @ bx
        h = max(_silverman(z) * 2.0, 1e-8)
        zg = np.linspace(z.min(), z.max(), 201)
        gv = np.empty_like(zg)
        for j, z0 in enumerate(zg):
            u = (z - z0) / h
            wt = np.maximum(0.0, 1.0 - u * u)
            sw = wt.sum()
            if sw <= 0:
                gv[j] = np.nan
                continue
            su = (wt * u).sum()
            suu = (wt * u * u).sum()
            sy = (wt * resid).sum()
            suy = (wt * u * resid).sum()
            det = sw * suu - su * su
            gv[j] = (suu * sy - su * suy) / det if det > 0 else sy / sw
        good = np.isfinite(gv)
        zg, gv = zg[good], gv[good]
        slope_lo = (gv[1] - gv[0]) / (zg[1] - zg[0])
        slope_hi = (gv[-1] - gv[-2]) / (zg[-1] - zg[-2])
        return PartialLinearSurface(
            bx=tuple(bx), zgrid=zg, gvals=gv, gslope_lo=slope_lo, gslope_hi=slope_hi
        )

    if learner == "kernel_ridge":
        from sklearn.kernel_ridge import KernelRidge

        feats = np.column_stack([x, z])
        center = feats.mean(axis=0)
        scale = feats.std(axis=0)
        scale[scale == 0] = 1.0
        feats = (feats - center) / scale
        cap = 2000
        if len(z) > cap:
            rng = np.random.default_rng(0) if rng is None else rng
            keep = rng.choice(len(z), size=cap, replace=False)
            feats, w = feats[keep], w[keep]
        model = KernelRidge(alpha=0.1, kernel="rbf", gamma=0.5 / feats.shape[1])
        model.fit(feats, w)
        return KernelRidgeSurface(model, center, scale)

    raise ValueError(f"unknown learner {learner!r}")


def _fit_xonly(x: np.ndarray, t: np.ndarray, learner: str):
    if learner != "linear":
        raise ValueError(f"unsupported conditional mean/variance learner {learner!r}")
    design = np.column_stack([np.ones(x.shape[0]), x])
    coef = _ols(design, t)

    def fn(xq):
        xq = np.atleast_2d(np.asarray(xq, dtype=float))
        return coef[0] + xq @ coef[1:]

    return fn


def fit_propensity_residual_kde(
    data,
    idx,
    mean_learner: str = "linear",
    var_learner: str = "linear",
    clip_bounds: tuple[float, float] = DEFAULT_CLIP,
) -> ResidualKdePropensity:
    """Instrument propensity via KDE of standardized residuals.

    Fits the conditional mean and variance of Z given X, standardizes
    the residuals, and applies Gaussian KDE with a Silverman bandwidth.
    Variance predictions below 1e-6 are floored (counted, not fatal).
    """
    idx = np.asarray(idx)
    if idx.size < 50:
        raise FoldTooSmall(f"residual KDE needs at least 50 observations, got {idx.size}")
    x = data.x[idx]
    z = data.z[idx]

    mean_fn = _fit_xonly(x, z, mean_learner)
    resid = z - mean_fn(x)
    var_fn_raw = _fit_xonly(x, resid**2, var_learner)

    floor_events = [0]

    def sd_fn(xq):
        v = var_fn_raw(xq)
        bad = v < _VARIANCE_FLOOR
        floor_events[0] += int(np.count_nonzero(bad))
        return np.sqrt(np.maximum(v, _VARIANCE_FLOOR))

    s = sd_fn(x)
    r = resid / s
    bw = max(_silverman(r), 1e-8)
    grid = np.linspace(r.min() - 4 * bw, r.max() + 4 * bw, 1024)
    gvals = np.zeros_like(grid)
    step = 4096
    for start in range(0, len(r), step):
        chunk = r[start : start + step]
        u = (grid[:, None] - chunk[None, :]) / bw
        gvals += np.exp(-0.5 * u * u).sum(axis=1)
    gvals /= len(r) * bw * _SQRT_2PI

    surf = ResidualKdePropensity(mean_fn, sd_fn, grid, gvals, clip_bounds)
    surf.variance_floor_events = floor_events
    return surf


def synthetic_nuisance(truth, alpha: float, n: int, rng) -> NuisanceFit:
    """Truth-based nuisances with controlled error of size n^(-alpha).

    ``truth`` is a data-generating process exposing
    ``perturbed_nuisance(alpha, n, rng)``; the perturbation draws are
    taken once from ``rng`` (pass an int seed or a Generator).
    """
    if alpha < 0:
        raise InvalidRate(f"alpha must be nonnegative, got {alpha}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return truth.perturbed_nuisance(alpha=alpha, n=n, rng=rng)


# ---------------------------------------------------------------------------
# marginal surfaces
# ---------------------------------------------------------------------------


@dataclass
class MarginalFit:
    """Fold-averaged marginal density and initial curve estimates."""

    f: object
    tau0: object | None
    lam0: object | None
    source_fold: int | None = None
    grid: np.ndarray | None = field(default=None, repr=False)

    def curve0(self, target: str):
        fn = self.tau0 if target == "outcome" else self.lam0
        if fn is None:
            raise ValueError(f"marginals carry no initial {target} curve")
        return fn


def _fold_average_fn(surface: RegressionSurface, xfold: np.ndarray, zgrid):
    terms = surface.tensor_terms()
    if terms is not None:
        phi, psi = terms
        phibar = phi(xfold).mean(axis=0)

        def fn(z):
            return psi(np.asarray(z, dtype=float)) @ phibar

        return fn
    if zgrid is not None:
        vals = surface.evaluate_grid(xfold, zgrid).mean(axis=0)
        spline = CubicSpline(zgrid, vals)

        def fn(z):
            return spline(np.asarray(z, dtype=float))

        return fn

    def fn(z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        step = max(1, 2_000_000 // max(1, xfold.shape[0]))
        for start in range(0, len(z), step):
            sub = z[start : start + step]
            out[start : start + step] = surface.evaluate_grid(xfold, sub).mean(axis=0)
        return out

    return fn


def marginals_from(nuisance: NuisanceFit, data, idx, grid_points: int | None = None) -> MarginalFit:
    """Average pi-hat, mu-hat, lambda-hat over a fold disjoint from training.

    With ``grid_points`` set, the marginal density is tabulated on that
    many nodes spanning the full data range and interpolated with a
    not-a-knot cubic spline; regression averages use their exact tensor
    form when available.
    """
    idx = np.asarray(idx)
    if idx.size == 0:
        raise EmptyFold("cannot build marginals from an empty fold")
    fold_label = None
    labels = np.unique(data.fold[idx])
    if labels.size == 1 and labels[0] >= 0:
        fold_label = int(labels[0])
    if (
        fold_label is not None
        and nuisance.training_fold is not None
        and fold_label == nuisance.training_fold
    ):
        raise FoldOverlap(
            f"marginal fold {fold_label} equals the nuisance training fold"
        )

    xfold = data.x[idx]
    zgrid = None
    if grid_points:
        lo, hi = float(np.min(data.z)), float(np.max(data.z))
        pad = 0.01 * (hi - lo) + 1e-9
        zgrid = np.linspace(lo - pad, hi + pad, int(grid_points))

    if zgrid is not None:
        fvals = np.zeros_like(zgrid)
        step = max(1, 4_000_000 // len(zgrid))
        for start in range(0, xfold.shape[0], step):
            fvals += nuisance.pi.density_grid(xfold[start : start + step], zgrid).sum(axis=0)
        fvals /= xfold.shape[0]
        fspline = CubicSpline(zgrid, fvals)

        def f_fn(z):
            return np.maximum(fspline(np.asarray(z, dtype=float)), 0.0)

    else:

        def f_fn(z):
            z = np.atleast_1d(np.asarray(z, dtype=float))
            out = np.empty_like(z)
            step = max(1, 2_000_000 // max(1, xfold.shape[0]))
            for start in range(0, len(z), step):
                sub = z[start : start + step]
                out[start : start + step] = nuisance.pi.density_grid(xfold, sub).mean(axis=0)
            return np.maximum(out, 0.0)

    tau0 = _fold_average_fn(nuisance.mu, xfold, zgrid) if nuisance.mu is not None else None
    lam0 = _fold_average_fn(nuisance.lam, xfold, zgrid) if nuisance.lam is not None else None
    return MarginalFit(f=f_fn, tau0=tau0, lam0=lam0, source_fold=fold_label, grid=zgrid)
