"""Data-adaptive bandwidth selection for derivative estimation.

For a candidate curve theta_bar, the weighted risk
``R = int (theta_bar^2 - 2 theta_bar theta) w dz`` has the per-observation
doubly robust loss

    L_w(O) = int theta_bar(z)^2 w(z) dz
             + 2 [ int d/dz{w theta_bar}(z) mu(X, z) dz
                   + d/dz{w theta_bar}(Z) (Y - mu(X, Z)) / pi(Z | X) ],

whose mean recovers R when w vanishes at the ends of the integration
range.  Selection splits the sample in two, fits each candidate's curve
on one half, averages the loss on the other, swaps, and minimizes the
averaged risk (ties broken toward the larger bandwidth).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import AllCandidatesFailed, ContivError, GridTooCoarse
from .nuisance import NuisanceFit, silverman_bandwidth
from .pseudo import CurveConfig, NuisanceSource, build_rotations, curve_from_rotations
from .smooth import smooth_curves

__all__ = ["RiskTable", "pseudo_risk_loss", "select", "default_candidates", "taper"]

_TAPER_FRACTION = 0.1


@dataclass
class RiskTable:
    """Per-candidate risk estimates and the selected bandwidth."""

    candidates: np.ndarray
    risk: np.ndarray
    per_direction: np.ndarray
    chosen: int
    method: str
    target: str
    fold_sizes: tuple[int, int]
    notes: list[str]

    @property
    def chosen_h(self) -> float:
        return float(self.candidates[self.chosen])

    def to_rows(self) -> list[dict]:
        rows = []
        for j, h in enumerate(self.candidates):
            rows.append(
                {
                    "h": float(h),
                    "risk": float(self.risk[j]),
                    "risk_fold1": float(self.per_direction[0, j]),
                    "risk_fold2": float(self.per_direction[1, j]),
                    "chosen": int(j == self.chosen),
                    "note": self.notes[j],
                }
            )
        return rows


def taper(values: np.ndarray, fraction: float = _TAPER_FRACTION) -> np.ndarray:
    """Cosine-taper a weight profile to zero at both ends of its grid."""
    g = len(values)
    ramp = np.ones(g)
    m = max(2, int(np.ceil(fraction * g)))
    ramp[:m] = 0.5 * (1.0 - np.cos(np.pi * np.arange(m) / m))
    ramp[-m:] = ramp[:m][::-1]
    return values * ramp


def pseudo_risk_loss(
    x: np.ndarray,
    z: np.ndarray,
    w_obs: np.ndarray,
    theta_vals: np.ndarray,
    grid: np.ndarray,
    weight_vals: np.ndarray,
    nuisance: NuisanceFit,
    target: str = "outcome",
    h_min: float | None = None,
) -> np.ndarray:
    """Per-observation loss L_w for a tabulated candidate curve.

    ``theta_vals`` and ``weight_vals`` give theta_bar and w on ``grid``;
    d/dz{w theta_bar} uses central finite differences on that grid and
    the integrals use the trapezoid rule.  Observations outside the grid
    get a zero pointwise term (w vanishes there).
    """
    grid = np.asarray(grid, dtype=float)
    step = float(np.max(np.diff(grid)))
    if h_min is not None and step > h_min / 4.0:
        raise GridTooCoarse(
            f"grid step {step:g} exceeds h_min/4 = {h_min / 4.0:g}"
        )
    wt = weight_vals * theta_vals
    term1 = float(np.trapezoid(theta_vals**2 * weight_vals, grid))
    dwt = np.gradient(wt, grid)

    surf = nuisance.surface(target)
    terms = surf.tensor_terms()
    if terms is not None:
        phi_fn, psi_fn = terms
        ints = np.trapezoid(dwt[:, None] * psi_fn(grid), grid, axis=0)
        term2 = phi_fn(x) @ ints
    else:
        quad_w = np.gradient(grid) * dwt  # trapezoid-equivalent on a uniform grid
        term2 = surf.evaluate_grid(x, grid) @ quad_w

    dwt_at_z = np.interp(z, grid, dwt, left=0.0, right=0.0)
    resid = w_obs - surf.evaluate(x, z)
    term3 = dwt_at_z * resid / nuisance.pi.density(x, z)
    return term1 + 2.0 * (term2 + term3)


def default_candidates(z: np.ndarray, k: int = 8) -> np.ndarray:
    """Geometric grid of k bandwidths spanning [0.5, 2] x a pilot value."""
    pilot = max(silverman_bandwidth(np.asarray(z, dtype=float)), 1e-8)
    return pilot * np.geomspace(0.5, 2.0, k)


def _marginal_weight(nuisance: NuisanceFit, x_fold: np.ndarray, grid: np.ndarray) -> np.ndarray:
    vals = np.zeros_like(grid)
    step = max(1, 4_000_000 // len(grid))
    for start in range(0, x_fold.shape[0], step):
        vals += nuisance.pi.density_grid(x_fold[start : start + step], grid).sum(axis=0)
    return taper(vals / x_fold.shape[0])


def select(
    data: Dataset,
    candidates,
    method: str,
    target: str,
    source: NuisanceSource,
    config: CurveConfig,
    w_spec: str | object = "marginal",
    n_grid: int = 101,
) -> RiskTable:
    """Two-fold swap-and-average bandwidth selection.

    For each half: nuisances are fitted on the training half, each
    candidate's derivative curve is cross-fitted within that half, and
    the loss is averaged over the other half.  ``w_spec`` is "marginal"
    (training-half average of pi-hat, cosine-tapered to zero at the grid
    ends) or a callable z -> weight that already vanishes there.
    """
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size < 1:
        raise ValueError("need at least one candidate bandwidth")
    rng = np.random.default_rng(config.seed)
    folded = data.with_folds(2, rng)
    lo, hi = np.quantile(folded.z, config.trim)
    grid = np.linspace(lo, hi, n_grid)
    step = float(grid[1] - grid[0])
    h_min = float(np.min(candidates))
    if step > h_min / 4.0:
        raise GridTooCoarse(
            f"risk grid step {step:g} exceeds min(candidates)/4 = {h_min / 4.0:g}; "
            "raise n_grid"
        )

    per_dir = np.full((2, candidates.size), np.inf)
    notes = [""] * candidates.size
    for d, (train, evl) in enumerate([(0, 1), (1, 0)]):
        train_idx = folded.fold_indices(train)
        eval_idx = folded.fold_indices(evl)
        risk_nuis = source.fit(folded, train_idx, train, rng, (target,))
        if callable(w_spec):
            weight_vals = np.asarray(w_spec(grid), dtype=float)
        elif w_spec == "marginal":
            weight_vals = _marginal_weight(risk_nuis, folded.x[train_idx], grid)
        else:
            raise ValueError(f"unknown weight spec {w_spec!r}")

        inner = folded.subset(train_idx)
        inner_cfg = replace(config, seed=(config.seed or 0) + 1000 + d, with_stderr=False)
        rotations = None
        if method == "localpoly":
            inner, rotations = build_rotations(inner, (target,), source, inner_cfg)

        x_eval = folded.x[eval_idx]
        z_eval = folded.z[eval_idx]
        w_eval = folded.outcome(target)[eval_idx]
        for j, h in enumerate(candidates):
            cfg_h = replace(inner_cfg, h=float(h))
            try:
                if method == "localpoly":
                    curve = curve_from_rotations(inner, rotations, target, cfg_h, grid)
                elif method == "smooth":
                    curve = smooth_curves(inner, (target,), source, cfg_h, grid)[target]
                else:
                    raise ValueError(f"unknown method {method!r}")
                theta_vals = curve.deriv
                if not np.all(np.isfinite(theta_vals)):
                    notes[j] = "window"
                    continue
                loss = pseudo_risk_loss(
                    x_eval, z_eval, w_eval, theta_vals, grid, weight_vals,
                    risk_nuis, target, h_min=float(h),
                )
                per_dir[d, j] = float(np.mean(loss))
            except ContivError as exc:
                notes[j] = type(exc).__name__

    risk = per_dir.mean(axis=0)
    finite = np.isfinite(risk)
    if not np.any(finite):
        raise AllCandidatesFailed("no candidate bandwidth produced a finite risk")
    rmin = np.min(risk[finite])
    tied = np.flatnonzero(finite & (risk == rmin))
    chosen = int(tied[np.argmax(candidates[tied])])
    return RiskTable(
        candidates=candidates,
        risk=risk,
        per_direction=per_dir,
        chosen=chosen,
        method=method,
        target=target,
        fold_sizes=(int(np.sum(folded.fold == 0)), int(np.sum(folded.fold == 1))),
        notes=notes,
    )
