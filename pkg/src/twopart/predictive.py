"""Two-part predictive combination, cutoff classification, and small-area
plug-in estimation."""

from dataclasses import dataclass

import numpy as np

from . import part1 as p1
from . import part2 as p2

__all__ = [
    "PredictiveSurface",
    "ConfusionSummary",
    "combine",
    "classify",
    "area_plugin",
]


@dataclass
class PredictiveSurface:
    """Predictive f(y | x, w) on the positive branch, for one unit.

    Bands carry only intensity-part variability: percentiles of the
    part-2 density scaled by the posterior-mean occurrence probability.
    The zero branch has mass 1 - p_positive.
    """

    unit_id: object
    x: np.ndarray
    w: np.ndarray
    z_grid: np.ndarray
    density_mean: np.ndarray
    density_lo: np.ndarray
    density_hi: np.ndarray
    p_positive: float
    point_prediction: float


@dataclass
class ConfusionSummary:
    true_zero_correct: float
    true_zero_wrong: float
    true_positive_correct: float
    true_positive_wrong: float
    accuracy: float
    cutoff: float


def combine(part1_draws, part2_draws, unit, z_grid, unit_id=None, log_z=False):
    """Predictive surface for one unit: part-2 density times posterior-mean
    occurrence probability; point prediction is the product of posterior means."""
    x, w = unit
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = np.atleast_1d(np.asarray(w, dtype=float))
    z_grid = np.asarray(z_grid, dtype=float)
    if part1_draws.n_draws == 0 or part2_draws.n_draws == 0:
        raise ValueError("both draw sets must be nonempty")
    if x.size != part2_draws.k - 1:
        raise ValueError("x length does not match the fitted intensity covariates")
    p_pos, _, _ = p1.expected_delta(part1_draws, w)

    if log_z:
        if np.any(z_grid <= 0):
            raise ValueError("z_grid must be positive when log_z is set")
        dens = p2.density_draw_matrix(part2_draws, x, np.log(z_grid)) / z_grid
    else:
        dens = p2.density_draw_matrix(part2_draws, x, z_grid)
    mean = dens.mean(axis=0) * p_pos
    lo = np.percentile(dens, 2.5, axis=0) * p_pos
    hi = np.percentile(dens, 97.5, axis=0) * p_pos

    cmeans = np.empty(part2_draws.n_draws)
    for s in range(part2_draws.n_draws):
        triple = (part2_draws.weights[s], part2_draws.mu[s], part2_draws.Sigma[s])
        if log_z:
            cmeans[s] = _lognormal_mean(triple, x)
        else:
            cmeans[s] = p2.conditional_mean(x, triple)
    point = p_pos * float(np.nanmean(cmeans))
    return PredictiveSurface(
        unit_id=unit_id, x=x, w=w, z_grid=z_grid,
        density_mean=mean, density_lo=lo, density_hi=hi,
        p_positive=p_pos, point_prediction=point,
    )


def _lognormal_mean(triple, x):
    """E(z | x) when the intensity part was fit on log z."""
    weights, mu, Sigma = triple
    wx = p2.local_weights(weights, mu, Sigma, x)
    if wx is None:
        return np.nan
    xv = np.atleast_1d(np.asarray(x, dtype=float))
    total = 0.0
    for l in range(weights.size):
        if wx[l] <= 0.0:
            continue
        beta0, beta2, sigma2 = p2.conditional_expert(p2.Atom(mu[l], Sigma[l]))
        m = beta0 + (beta2 @ xv if beta2.size else 0.0)
        total += wx[l] * np.exp(m + 0.5 * sigma2)
    return total


def classify(p_positive, truth, cutoff=0.5):
    """Cutoff classification; prediction is positive iff p > cutoff (strict)."""
    p_positive = np.asarray(p_positive, dtype=float).ravel()
    truth = np.asarray(truth, dtype=int).ravel()
    if p_positive.size != truth.size:
        raise ValueError("p_positive and truth lengths differ")
    if not 0.0 < cutoff < 1.0:
        raise ValueError("cutoff must lie in (0, 1)")
    pred = p_positive > cutoff
    n = truth.size
    tz_ok = np.count_nonzero((truth == 0) & ~pred) / n
    tz_bad = np.count_nonzero((truth == 0) & pred) / n
    tp_ok = np.count_nonzero((truth == 1) & pred) / n
    tp_bad = np.count_nonzero((truth == 1) & ~pred) / n
    return ConfusionSummary(
        true_zero_correct=tz_ok,
        true_zero_wrong=tz_bad,
        true_positive_correct=tp_ok,
        true_positive_wrong=tp_bad,
        accuracy=tz_ok + tp_ok,
        cutoff=cutoff,
    )


def area_plugin(area_map, observed, predicted):
    """Plug-in area totals/means: observed in-sample values plus model
    predictions for out-of-sample units.

    area_map: unit id -> area label; observed / predicted: unit id -> value.
    Every unit must appear in exactly one of the two value maps.
    """
    obs_ids = set(observed)
    pred_ids = set(predicted)
    both = obs_ids & pred_ids
    if both:
        raise ValueError(f"units in both observed and predicted sets: {sorted(both)[:5]}")
    neither = set(area_map) - obs_ids - pred_ids
    if neither:
        raise ValueError(f"units in neither observed nor predicted set: {sorted(neither)[:5]}")
    extra = (obs_ids | pred_ids) - set(area_map)
    if extra:
        raise ValueError(f"units without an area assignment: {sorted(extra)[:5]}")
    totals = {}
    counts = {}
    for uid, area in area_map.items():
        val = observed[uid] if uid in observed else predicted[uid]
        totals[area] = totals.get(area, 0.0) + float(val)
        counts[area] = counts.get(area, 0) + 1
    return {area: {"total": totals[area],
                   "mean": totals[area] / counts[area],
                   "n_units": counts[area]}
            for area in sorted(totals, key=str)}
