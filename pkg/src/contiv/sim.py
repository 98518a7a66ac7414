"""Monte Carlo harness: replication cells, RMSE/coverage metrics, baselines.

A cell is (DGP, estimator, n, alpha); each of its S replications draws a
fresh sample, builds rate-controlled synthetic nuisances (error scale
n^-alpha; alpha=None means exact truth), and evaluates the estimator on
a fixed grid.  The reported RMSE integrates the per-point RMS error over
replications against the truncated marginal distribution of Z:

    RMSE = sum_j w_j sqrt( mean_s (est_sj - truth_j)^2 ),

with w_j proportional to the marginal density on the trimmed grid.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dgp import ComplierDgp
from .pseudo import (
    CurveConfig,
    SyntheticSource,
    build_rotations,
    crossfit_curve,
    curve_from_rotations,
)
from .smooth import smooth_curves

__all__ = [
    "SimResult",
    "EstimatorSpec",
    "trimmed_grid",
    "pstar_weights",
    "rmse_over_grid",
    "default_bandwidth",
    "run_cell",
    "run_grid",
    "rate_slope",
    "results_to_rows",
]

ESTIMATORS = ("localpoly", "smooth", "plugin", "projection")


@dataclass
class EstimatorSpec:
    """How one estimator cell is configured.

    ``h`` / ``h_den`` of None picks the n-scaled default rule.  For DGPs
    with a treatment arm the estimand is the LIV curve (ratio of
    derivatives); otherwise the outcome derivative.
    """

    name: str
    h: float | None = None
    h_den: float | None = None
    p: int = 2
    kernel: str = "epanechnikov"
    smooth_kernel: str = "gaussian4"
    rotate: bool = True
    coverage: bool = False


@dataclass
class SimResult:
    dgp: str
    estimator: str
    estimand: str
    n: int
    alpha: float | None
    h: float
    reps: int
    rmse: float
    coverage: float
    seconds: float
    note: str = ""
    estimates: np.ndarray | None = field(default=None, repr=False)


def trimmed_grid(dgp, size: int = 50, trim: tuple[float, float] = (0.05, 0.95)) -> np.ndarray:
    """Evaluation grid between the trim quantiles of the Z marginal."""
    if isinstance(dgp, ComplierDgp):
        return np.linspace(trim[0], trim[1], size)
    return np.linspace(dgp.z_quantile(trim[0]), dgp.z_quantile(trim[1]), size)


def pstar_weights(dgp, grid: np.ndarray) -> np.ndarray:
    """Normalized truncated-marginal weights on the grid."""
    if isinstance(dgp, ComplierDgp):
        w = np.ones_like(grid)
    else:
        w = dgp.z_pdf(grid)
    return w / w.sum()


def rmse_over_grid(estimates: np.ndarray, truth: np.ndarray, weights: np.ndarray) -> float:
    """Weighted integral of the per-point RMS error over replications.

    NaN estimates (flagged grid points) are excluded pointwise; points
    missing in every replication drop out with weight renormalization.
    """
    err2 = (estimates - truth[None, :]) ** 2
    with np.errstate(invalid="ignore"):
        point_rmse = np.sqrt(np.nanmean(err2, axis=0))
    ok = np.isfinite(point_rmse)
    if not np.any(ok):
        return float("nan")
    w = weights[ok] / weights[ok].sum()
    return float(np.sum(w * point_rmse[ok]))


def default_bandwidth(dgp, n: int, role: str = "outcome") -> float:
    """n^(-1/7)-scaled default bandwidths, wider for the flat treatment arm."""
    base = {"outcome": 0.55, "treatment": 1.1, "smooth": 0.45}[role]
    sd = 1.0 if isinstance(dgp, ComplierDgp) else dgp.z_sd
    return base * sd * (n / 20000.0) ** (-1.0 / 7.0)


def _cell_seed(master: int, dgp_name: str, estimator: str, n: int, alpha) -> int:
    tag = f"{dgp_name}|{estimator}|{n}|{alpha}".encode()
    return (int(master) * 1_000_003 + zlib.crc32(tag)) % (2**31 - 1)


def _ratio_curve(num, den, floor: float = 1e-3) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = num.deriv / den.deriv
    gamma[~np.isfinite(den.deriv) | (np.abs(den.deriv) <= floor)] = np.nan
    return gamma


def _one_rep(dgp, spec: EstimatorSpec, n: int, alpha, estimand: str, grid, rng):
    """One replication: returns (estimates, stderrs-or-None) on the grid."""
    data = dgp.generate(n, rng)
    source = SyntheticSource(dgp, alpha)
    seed = int(rng.integers(2**31 - 1))

    if spec.name == "plugin":
        nf = source.fit(data, np.arange(n), None, rng, ("outcome",))
        surf = nf.surface("outcome")
        step = 1e-3
        vals = (surf.evaluate_grid(data.x, grid + step) - surf.evaluate_grid(data.x, grid - step)) / (
            2 * step
        )
        return vals.mean(axis=0), None

    h = spec.h if spec.h is not None else default_bandwidth(dgp, n, "outcome")
    if spec.name == "smooth":
        cfg = CurveConfig(
            h=spec.h if spec.h is not None else default_bandwidth(dgp, n, "smooth"),
            kernel=spec.smooth_kernel,
            rotate=spec.rotate,
            with_stderr=spec.coverage,
            seed=seed,
        )
        if estimand == "gamma":
            folded = data.with_folds(2, np.random.default_rng(seed))
            num = smooth_curves(folded, ("outcome",), source, cfg, grid)["outcome"]
            h_den = spec.h_den if spec.h_den is not None else default_bandwidth(dgp, n, "treatment")
            den = smooth_curves(folded, ("treatment",), source, replace(cfg, h=h_den), grid)["treatment"]
            return _ratio_curve(num, den), None
        curve = smooth_curves(data, ("outcome",), source, cfg, grid)["outcome"]
        return curve.deriv, curve.deriv_stderr

    # local polynomial pipeline (also the base for the projection estimate)
    cfg = CurveConfig(
        h=h,
        p=spec.p,
        kernel=spec.kernel,
        grid=grid,
        rotate=spec.rotate,
        with_stderr=spec.coverage,
        seed=seed,
    )
    if estimand == "gamma":
        h_den = spec.h_den if spec.h_den is not None else default_bandwidth(dgp, n, "treatment")
        folded, rotations = build_rotations(data, ("outcome", "treatment"), source, cfg)
        num = curve_from_rotations(folded, rotations, "outcome", cfg, grid)
        den = curve_from_rotations(folded, rotations, "treatment", replace(cfg, h=h_den), grid)
        gamma = _ratio_curve(num, den)
        if spec.name == "projection":
            w = pstar_weights(dgp, grid)
            ok = np.isfinite(gamma)
            psi = float(np.sum(w[ok] * grid[ok] * gamma[ok]) / np.sum(w[ok] * grid[ok] ** 2))
            return psi * grid, None
        return gamma, None
    curve = crossfit_curve(data, "outcome", source, cfg)
    if spec.name == "projection":
        w = pstar_weights(dgp, grid)
        ok = np.isfinite(curve.deriv)
        psi = float(np.sum(w[ok] * grid[ok] * curve.deriv[ok]) / np.sum(w[ok] * grid[ok] ** 2))
        return psi * grid, None
    return curve.deriv, curve.deriv_stderr


def run_cell(
    dgp,
    spec: EstimatorSpec,
    n: int,
    alpha: float | None,
    reps: int,
    seed: int = 0,
    grid_size: int = 50,
    keep_estimates: bool = False,
    jobs: int = 1,
) -> SimResult:
    """Run one (DGP, estimator, n, alpha) cell for ``reps`` replications."""
    grid = trimmed_grid(dgp, grid_size)
    weights = pstar_weights(dgp, grid)
    estimand = "gamma" if getattr(dgp, "has_treatment", False) else "theta_y"
    truth = dgp.gamma(grid) if estimand == "gamma" else dgp.theta_y(grid)

    cell_seed = _cell_seed(seed, dgp.name, spec.name, n, alpha)
    children = np.random.SeedSequence(cell_seed).spawn(reps)

    def one(child):
        return _one_rep(dgp, spec, n, alpha, estimand, grid, np.random.default_rng(child))

    start = time.perf_counter()
    if jobs > 1:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=jobs)(delayed(one)(c) for c in children)
    else:
        outs = [one(c) for c in children]
    seconds = time.perf_counter() - start

    est = np.vstack([e for e, _ in outs])
    rmse = rmse_over_grid(est, truth, weights)
    coverage = float("nan")
    if spec.coverage and outs[0][1] is not None:
        ses = np.vstack([s for _, s in outs])
        lo = est - 1.959963984540054 * ses
        hi = est + 1.959963984540054 * ses
        inside = (lo <= truth[None, :]) & (truth[None, :] <= hi)
        coverage = float(np.nanmean(np.where(np.isfinite(est), inside, np.nan)))

    h_used = spec.h if spec.h is not None else default_bandwidth(
        dgp, n, "smooth" if spec.name == "smooth" else "outcome"
    )
    nan_frac = float(np.mean(~np.isfinite(est)))
    return SimResult(
        dgp=dgp.name,
        estimator=spec.name,
        estimand=estimand,
        n=n,
        alpha=alpha,
        h=float(h_used),
        reps=reps,
        rmse=rmse,
        coverage=coverage,
        seconds=seconds,
        note=f"nan_frac={nan_frac:.3f}" if nan_frac else "",
        estimates=est if keep_estimates else None,
    )


def run_grid(
    dgps,
    specs,
    ns,
    alphas,
    reps: int,
    seed: int = 0,
    grid_size: int = 50,
    jobs: int = 1,
) -> list[SimResult]:
    """All cells of the cross product; failures are isolated per cell."""
    results = []
    for dgp in dgps:
        for spec in specs:
            for n in ns:
                for alpha in alphas:
                    try:
                        results.append(
                            run_cell(dgp, spec, n, alpha, reps, seed, grid_size, jobs=jobs)
                        )
                    except Exception as exc:  # noqa: BLE001 - cell isolation
                        results.append(
                            SimResult(
                                dgp=dgp.name,
                                estimator=spec.name,
                                estimand="",
                                n=n,
                                alpha=alpha,
                                h=float("nan"),
                                reps=reps,
                                rmse=float("nan"),
                                coverage=float("nan"),
                                seconds=0.0,
                                note=f"failed: {type(exc).__name__}",
                            )
                        )
    return results


def rate_slope(
    dgp,
    ns,
    reps: int,
    seed: int = 0,
    h_ref: float = 0.55,
    n_ref: int = 16000,
    gamma_smooth: int = 3,
    grid_size: int = 30,
) -> dict:
    """log-RMSE versus log-n slopes in the oracle (exact-nuisance) regime.

    Uses the local polynomial pipeline with degree p = gamma_smooth and
    per-n bandwidth h = h_ref (n / n_ref)^(-1 / (2 gamma_smooth + 1));
    value and derivative slopes come from the same fits.
    """
    ns = sorted(int(n) for n in ns)
    if len(ns) < 4:
        raise ValueError("need at least 4 sample sizes for a stable slope")
    grid = trimmed_grid(dgp, grid_size)
    weights = pstar_weights(dgp, grid)
    truth_val = dgp.tau(grid)
    truth_der = dgp.theta_y(grid)
    rmse_val, rmse_der = [], []
    for n in ns:
        h = h_ref * (n / n_ref) ** (-1.0 / (2 * gamma_smooth + 1))
        children = np.random.SeedSequence(_cell_seed(seed, dgp.name, "rate", n, None)).spawn(reps)
        vals = np.empty((reps, len(grid)))
        ders = np.empty((reps, len(grid)))
        for s, child in enumerate(children):
            rng = np.random.default_rng(child)
            data = dgp.generate(n, rng)
            cfg = CurveConfig(
                h=h,
                p=gamma_smooth,
                grid=grid,
                rotate=True,
                with_stderr=False,
                seed=int(rng.integers(2**31 - 1)),
            )
            curve = crossfit_curve(data, "outcome", SyntheticSource(dgp, None), cfg)
            vals[s] = curve.value
            ders[s] = curve.deriv
        rmse_val.append(rmse_over_grid(vals, truth_val, weights))
        rmse_der.append(rmse_over_grid(ders, truth_der, weights))
    logn = np.log(np.asarray(ns, dtype=float))
    return {
        "ns": ns,
        "rmse_value": rmse_val,
        "rmse_deriv": rmse_der,
        "slope_value": float(np.polyfit(logn, np.log(rmse_val), 1)[0]),
        "slope_deriv": float(np.polyfit(logn, np.log(rmse_der), 1)[0]),
    }


def results_to_rows(results) -> list[dict]:
    rows = []
    for r in results:
        rows.append(
            {
                "dgp": r.dgp,
                "estimator": r.estimator,
                "estimand": r.estimand,
                "n": r.n,
                "alpha": "" if r.alpha is None else r.alpha,
                "h": r.h,
                "S": r.reps,
                "rmse": r.rmse,
                "coverage": r.coverage,
                "seconds": round(r.seconds, 3),
                "note": r.note,
            }
        )
    return rows
