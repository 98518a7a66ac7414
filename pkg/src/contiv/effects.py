"""Instrument-specific estimands built from dose-response derivative curves.

The local-IV curve is the pointwise ratio of the outcome and treatment
dose-response derivatives; the latent-threshold density is the treatment
derivative itself; the maximal-complier proportion and the LATE within
that class come from dose-response values at the instrument's support
edges (Z rescaled to [0, 1]).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from .data import Dataset
from .errors import MisalignedFolds, ZeroDenominator
from .pseudo import (
    CurveConfig,
    CurveEstimate,
    NuisanceSource,
    build_rotations,
    crossfit_curves,
    curve_from_rotations,
)
from .smooth import smooth_curves

__all__ = [
    "LivCurve",
    "ComplierResult",
    "RatePoint",
    "liv_curve",
    "threshold_density",
    "maximal_complier",
    "ratio_variance_rate_aware",
    "ratio_variance_influence",
]

DEFAULT_RELEVANCE_FLOOR = 1e-3

FLAG_WEAK = "weak_instrument"
FLAG_NEGATIVE = "negative_density"


# ---------------------------------------------------------------------------
# ratio variance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RatePoint:
    """Point estimate with stderr and a convergence-rate tag.

    ``rate`` orders the two sides: a strictly larger value means the
    estimate converges faster (e.g. use the bandwidth when sample sizes
    match).  Equal rates trigger the full delta method.
    """

    estimate: float
    stderr: float
    rate: float = 1.0


def ratio_variance_rate_aware(num: RatePoint, den: RatePoint, cov: float = 0.0) -> float:
    """Stderr of num/den by the rate-dominant case analysis.

    Faster numerator: the denominator noise dominates and the stderr is
    |num| * se_den / den^2.  Faster denominator: se_num / |den|.  Equal
    rates: full delta method with the supplied covariance.
    """
    if den.estimate == 0.0:
        raise ZeroDenominator("ratio denominator estimate is zero")
    d = den.estimate
    if num.rate > den.rate:
        return abs(num.estimate) * den.stderr / d**2
    if num.rate < den.rate:
        return num.stderr / abs(d)
    var = (
        num.stderr**2 / d**2
        + num.estimate**2 * den.stderr**2 / d**4
        - 2.0 * num.estimate * cov / d**3
    )
    return float(np.sqrt(max(var, 0.0)))


def ratio_variance_influence(
    phi_num: np.ndarray, phi_den: np.ndarray, num: float, den: float
) -> float:
    """Stderr of num/den from per-observation influence values.

    Combines the two expansions as phi_num/den - (num/den^2) phi_den and
    returns the sample standard deviation over sqrt(n); this adapts to
    whichever side converges slower without rate declarations.
    """
    phi_num = np.asarray(phi_num, dtype=float)
    phi_den = np.asarray(phi_den, dtype=float)
    if phi_num.shape != phi_den.shape:
        raise MisalignedFolds(
            f"influence arrays have shapes {phi_num.shape} and {phi_den.shape}"
        )
    if den == 0.0:
        raise ZeroDenominator("ratio denominator estimate is zero")
    psi = phi_num / den - (num / den**2) * phi_den
    n = len(psi)
    return float(np.std(psi, ddof=1) / np.sqrt(n))


# ---------------------------------------------------------------------------
# LIV curve
# ---------------------------------------------------------------------------


@dataclass
class LivCurve:
    """Ratio-of-derivatives curve with retained component estimates."""

    grid: np.ndarray
    gamma: np.ndarray
    stderr: np.ndarray
    flag: list[str]
    numerator: CurveEstimate
    denominator: CurveEstimate
    method: str
    variance_route: str
    relevance_floor: float

    def ci(self, level: float = 0.95):
        zq = norm.ppf(0.5 + level / 2.0)
        return self.gamma - zq * self.stderr, self.gamma + zq * self.stderr

    def to_rows(self, level: float = 0.95) -> list[dict]:
        lo, hi = self.ci(level)
        rows = []
        for j, z0 in enumerate(self.grid):
            rows.append(
                {
                    "z0": float(z0),
                    "gamma": float(self.gamma[j]),
                    "stderr": float(self.stderr[j]),
                    "ci_lo": float(lo[j]),
                    "ci_hi": float(hi[j]),
                    "theta_y": float(self.numerator.deriv[j]),
                    "theta_a": float(self.denominator.deriv[j]),
                    "flag": self.flag[j],
                }
            )
        return rows


def _run_both_targets(
    data: Dataset,
    source: NuisanceSource,
    config: CurveConfig,
    method: str,
    h_den: float | None,
) -> tuple[CurveEstimate, CurveEstimate]:
    targets = ("outcome", "treatment")
    if method == "localpoly":
        folded, rotations = build_rotations(data, targets, source, config)
        grid = config.resolve_grid(folded.z)
        num = curve_from_rotations(folded, rotations, "outcome", config, grid)
        den_cfg = config if h_den is None else replace(config, h=h_den)
        den = curve_from_rotations(folded, rotations, "treatment", den_cfg, grid)
        return num, den
    if h_den is None or h_den == config.h:
        both = smooth_curves(data, targets, source, config)
        return both["outcome"], both["treatment"]
    rng = np.random.default_rng(config.seed)
    folded = data.with_folds(2, rng)
    num = smooth_curves(folded, ("outcome",), source, config)["outcome"]
    den = smooth_curves(folded, ("treatment",), source, replace(config, h=h_den))["treatment"]
    return num, den


def liv_curve(
    data: Dataset,
    source: NuisanceSource,
    config: CurveConfig,
    method: str = "localpoly",
    variance_route: str = "influence",
    relevance_floor: float = DEFAULT_RELEVANCE_FLOOR,
    h_den: float | None = None,
) -> LivCurve:
    """Estimate the local-IV curve on a grid.

    Both dose-response derivatives are fitted under one fold scheme so
    their influence values align observation by observation.  Points
    where the treatment derivative is at or below ``relevance_floor``
    in absolute value are flagged and reported as NaN, not dropped.
    """
    config = replace(config, keep_influence=(variance_route == "influence"))
    num, den = _run_both_targets(data, source, config, method, h_den)

    g = len(num.grid)
    gamma = np.full(g, np.nan)
    stderr = np.full(g, np.nan)
    flags = []
    for j in range(g):
        if num.flag[j] == "window" or den.flag[j] == "window":
            flags.append("window")
            continue
        ta = den.deriv[j]
        ty = num.deriv[j]
        if not np.isfinite(ta) or abs(ta) <= relevance_floor:
            flags.append(FLAG_WEAK)
            continue
        gamma[j] = ty / ta
        if variance_route == "influence":
            if num.influence_idx is None or den.influence_idx is None or not np.array_equal(
                num.influence_idx, den.influence_idx
            ):
                raise MisalignedFolds("component curves do not share a fold scheme")
            ok = np.isfinite(num.influence[:, j]) & np.isfinite(den.influence[:, j])
            stderr[j] = ratio_variance_influence(
                num.influence[ok, j], den.influence[ok, j], ty, ta
            )
        elif variance_route == "rate_aware":
            stderr[j] = ratio_variance_rate_aware(
                RatePoint(ty, float(num.deriv_stderr[j]), rate=num.h),
                RatePoint(ta, float(den.deriv_stderr[j]), rate=den.h),
            )
        else:
            raise ValueError(f"unknown variance route {variance_route!r}")
        flags.append("ok")
    return LivCurve(
        grid=num.grid,
        gamma=gamma,
        stderr=stderr,
        flag=flags,
        numerator=num,
        denominator=den,
        method=method,
        variance_route=variance_route,
        relevance_floor=relevance_floor,
    )


def threshold_density(
    data: Dataset,
    source: NuisanceSource,
    config: CurveConfig,
    method: str = "localpoly",
) -> CurveEstimate:
    """Latent-threshold density: the treatment dose-response derivative.

    Negative point estimates contradict instrument monotonicity; they
    are flagged "negative_density" but never truncated.
    """
    runner = crossfit_curves if method == "localpoly" else smooth_curves
    curve = runner(data, ("treatment",), source, config)["treatment"]
    flags = [
        FLAG_NEGATIVE if f == "ok" and np.isfinite(d) and d < 0 else f
        for f, d in zip(curve.flag, curve.deriv)
    ]
    curve.flag = flags
    return curve


# ---------------------------------------------------------------------------
# maximal complier class
# ---------------------------------------------------------------------------


@dataclass
class ComplierResult:
    """Boundary-based maximal-complier proportion and LATE."""

    proportion: float
    proportion_stderr: float
    proportion_ci: tuple[float, float]
    late: float | None
    late_stderr: float | None
    late_ci: tuple[float, float] | None
    components: dict[str, dict[str, float]]
    flag: str
    n: int

    def to_json(self) -> dict:
        return {
            "proportion": self.proportion,
            "proportion_stderr": self.proportion_stderr,
            "proportion_ci": list(self.proportion_ci),
            "late": self.late,
            "late_stderr": self.late_stderr,
            "late_ci": list(self.late_ci) if self.late_ci else None,
            "components": self.components,
            "flag": self.flag,
            "n": self.n,
        }


def maximal_complier(
    data: Dataset,
    source: NuisanceSource,
    config: CurveConfig,
    relevance_floor: float = DEFAULT_RELEVANCE_FLOOR,
    level: float = 0.95,
) -> ComplierResult:
    """Proportion lam(1) - lam(0) and LATE (tau(1) - tau(0)) / proportion.

    Requires Z rescaled into [0, 1] (see ``data.rescale_unit``).  The
    two boundary fits use disjoint kernel windows for h < 1/2, so their
    estimates are treated as independent in the delta method; the LATE
    is omitted (flag "weak_instrument") when the proportion estimate is
    at or below ``relevance_floor``.
    """
    if data.z.min() < -1e-9 or data.z.max() > 1.0 + 1e-9:
        raise ValueError("maximal_complier needs Z within [0, 1]; rescale first")
    grid = np.array([0.0, 1.0])
    both = crossfit_curves(data, ("outcome", "treatment"), source, replace(config, grid=grid))
    tau, lam = both["outcome"], both["treatment"]

    comp = {}
    for name, curve, j in (
        ("lam0", lam, 0),
        ("lam1", lam, 1),
        ("tau0", tau, 0),
        ("tau1", tau, 1),
    ):
        comp[name] = {
            "estimate": float(curve.value[j]),
            "stderr": float(curve.value_stderr[j]),
        }

    prop_raw = comp["lam1"]["estimate"] - comp["lam0"]["estimate"]
    prop_se = float(np.hypot(comp["lam1"]["stderr"], comp["lam0"]["stderr"]))
    zq = norm.ppf(0.5 + level / 2.0)
    prop = float(np.clip(prop_raw, 0.0, 1.0))
    prop_ci = (prop_raw - zq * prop_se, prop_raw + zq * prop_se)

    if prop_raw <= relevance_floor:
        return ComplierResult(
            proportion=prop,
            proportion_stderr=prop_se,
            proportion_ci=prop_ci,
            late=None,
            late_stderr=None,
            late_ci=None,
            components=comp,
            flag=FLAG_WEAK,
            n=data.n,
        )

    num = comp["tau1"]["estimate"] - comp["tau0"]["estimate"]
    num_se = float(np.hypot(comp["tau1"]["stderr"], comp["tau0"]["stderr"]))
    late = num / prop_raw
    late_se = float(np.sqrt(num_se**2 + late**2 * prop_se**2) / abs(prop_raw))
    return ComplierResult(
        proportion=prop,
        proportion_stderr=prop_se,
        proportion_ci=prop_ci,
        late=late,
        late_stderr=late_se,
        late_ci=(late - zq * late_se, late + zq * late_se),
        components=comp,
        flag="ok",
        n=data.n,
    )
