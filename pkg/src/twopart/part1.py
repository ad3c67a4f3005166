"""Occurrence part: semiparametric binary regression via a latent threshold.

delta_i = I(V_i <= w_i' beta1) with V_i ~ G1 and a DP prior on G1 centered
at Logistic(0, 1). The latent thresholds are resampled with a marginal
Polya-urn sweep (numba kernel), beta1 with a constrained random-walk
Metropolis step, and the DP precision with the usual Beta/Gamma-mixture
augmentation.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from scipy.special import ndtr, ndtri

from .distributions import logistic_cdf

__all__ = [
    "Part1Data",
    "Part1State",
    "Part1Draws",
    "init_state",
    "update_latent_V",
    "update_beta1",
    "refresh_beta1",
    "update_joint_shift",
    "update_joint_scale",
    "update_alpha1",
    "run_part1",
    "estimated_link",
    "expected_delta",
    "expected_delta_many",
]


@dataclass
class Part1Data:
    """Binary responses and occurrence covariates (intercept column included)."""

    delta: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.int64).ravel()
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if self.W.shape[0] != self.delta.size:
            raise ValueError("delta and W row counts differ")
        if not np.all((self.delta == 0) | (self.delta == 1)):
            raise ValueError("delta entries must be 0 or 1")
        if self.n >= self.W.shape[1] > 0 and np.linalg.matrix_rank(self.W) < self.W.shape[1]:
            raise ValueError("occurrence covariate matrix W is rank deficient")

    @property
    def n(self):
        return self.delta.size

    @property
    def r(self):
        return self.W.shape[1]


@dataclass
class Part1State:
    beta1: np.ndarray
    V: np.ndarray
    alpha1: float
    # urn bookkeeping: slot arrays sized n+1, free-slot stack, [high-water, n-free]
    labels: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    free: np.ndarray
    slots: np.ndarray
    mh_scale: float = 0.1
    mh_accepted: int = 0
    mh_proposed: int = 0

    @property
    def n_clusters(self):
        return int(np.count_nonzero(self.counts[: self.slots[0]]))

    @property
    def mh_acceptance(self):
        return self.mh_accepted / max(1, self.mh_proposed)


@dataclass
class Part1Draws:
    """Thinned post-burn-in snapshots of the occurrence sampler."""

    beta1: np.ndarray      # (S, r)
    alpha1: np.ndarray     # (S,)
    V: np.ndarray          # (S, n)
    n_clusters: np.ndarray  # (S,)
    n: int

    @property
    def n_draws(self):
        return self.alpha1.size

    def concat(self, other):
        return Part1Draws(
            beta1=np.concatenate([self.beta1, other.beta1]),
            alpha1=np.concatenate([self.alpha1, other.alpha1]),
            V=np.concatenate([self.V, other.V]),
            n_clusters=np.concatenate([self.n_clusters, other.n_clusters]),
            n=self.n,
        )


# -- numba kernels ------------------------------------------------------------

@njit(cache=True)
def _lcdf(v):
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


@njit(cache=True)
def _trunc_lower(t):
    # Logistic(0,1) restricted to (-inf, t]
    p = _lcdf(t)
    if p <= 1e-300:
        return t
    u = np.random.random() * p
    if u <= 0.0:
        return t
    x = math.log(u) - math.log1p(-u)
    if x > t:
        x = t
    return x


@njit(cache=True)
def _urn_sweep(V, labels, values, counts, free, slots, t, delta, alpha1, seed):
    """One Polya-urn pass over all units, in place.

    For unit i the full conditional puts mass alpha1 * G0(interval) on a
    fresh truncated-baseline draw and mass (cluster count) on each existing
    value lying in the interval consistent with (delta_i, t_i).
    """
    np.random.seed(seed)
    n = V.shape[0]
    for i in range(n):
        c = labels[i]
        counts[c] -= 1
        if counts[c] == 0:
            free[slots[1]] = c
            slots[1] += 1
        ti = t[i]
        d1 = delta[i] == 1
        p0 = _lcdf(ti) if d1 else _lcdf(-ti)
        hi = slots[0]
        total = alpha1 * p0
        for s in range(hi):
            if counts[s] > 0:
                v = values[s]
                if (d1 and v <= ti) or ((not d1) and v > ti):
                    total += counts[s]
        chosen = -1
        if total > 0.0:
            u = np.random.random() * total
            acc = alpha1 * p0
            if u >= acc:
                for s in range(hi):
                    if counts[s] > 0:
                        v = values[s]
                        if (d1 and v <= ti) or ((not d1) and v > ti):
                            acc += counts[s]
                            if u < acc:
                                chosen = s
                                break
        if chosen >= 0:
            labels[i] = chosen
            counts[chosen] += 1
            V[i] = values[chosen]
        else:
            if d1:
                newv = _trunc_lower(ti)
            else:
                newv = -_trunc_lower(-ti)
                if newv <= ti:
                    newv = ti + 1e-12 * (1.0 + abs(ti))
            if slots[1] > 0:
                slots[1] -= 1
                s = free[slots[1]]
            else:
                s = slots[0]
                slots[0] += 1
            values[s] = newv
            counts[s] = 1
            labels[i] = s
            V[i] = newv


# -- state construction and updates -------------------------------------------

def _logistic_mle(delta, W, max_iter=50):
    """Newton/IRLS logistic fit; raises on separation or non-convergence."""
    beta = np.zeros(W.shape[1])
    for _ in range(max_iter):
        eta = W @ beta
        p = logistic_cdf(eta)
        wgt = p * (1.0 - p)
        if np.any(wgt < 1e-12) and np.max(np.abs(eta)) > 30.0:
            raise np.linalg.LinAlgError("separation")
        grad = W.T @ (delta - p)
        hess = (W * wgt[:, None]).T @ W
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.max(np.abs(beta)) > 1e6:
            raise np.linalg.LinAlgError("separation")
        if np.max(np.abs(step)) < 1e-8:
            return beta
    return beta


def _rebuild_clusters(state):
    """Recompute labels/values/counts from V (used after init)."""
    n = state.V.size
    uniq, inverse, counts = np.unique(state.V, return_inverse=True, return_counts=True)
    state.values[: uniq.size] = uniq
    state.counts[:] = 0
    state.counts[: uniq.size] = counts
    state.labels[:] = inverse
    state.slots[0] = uniq.size
    state.slots[1] = 0


def init_state(data, hyper, rng):
    """MLE start for beta1, constrained baseline draws for V, prior-mean alpha1."""
    n, r = data.n, data.r
    if n > 0:
        try:
            beta1 = _logistic_mle(data.delta, data.W)
        except np.linalg.LinAlgError:
            warnings.warn(
                "logistic MLE failed (separation); starting beta1 at its prior mean"
            )
            beta1 = hyper.beta1_0.copy()
    else:
        beta1 = hyper.beta1_0.copy()
    t = data.W @ beta1 if n > 0 else np.empty(0)
    V = np.empty(n)
    for i in range(n):
        p = logistic_cdf(t[i])
        if data.delta[i] == 1:
            u = rng.random() * max(p, 1e-300)
        else:
            u = p + rng.random() * max(1.0 - p, 1e-300)
        u = min(max(u, 1e-300), 1.0 - 1e-16)
        V[i] = np.log(u) - np.log1p(-u)
        # enforce the open/closed interval exactly
        if data.delta[i] == 1 and V[i] > t[i]:
            V[i] = t[i]
        elif data.delta[i] == 0 and V[i] <= t[i]:
            V[i] = np.nextafter(t[i], np.inf)
    state = Part1State(
        beta1=beta1,
        V=V,
        alpha1=hyper.a1_0 / hyper.b1_0,
        labels=np.zeros(n, dtype=np.int64),
        values=np.zeros(n + 1),
        counts=np.zeros(n + 1, dtype=np.int64),
        free=np.zeros(n + 1, dtype=np.int64),
        slots=np.zeros(2, dtype=np.int64),
        mh_scale=hyper.mh_step_scale,
    )
    if n > 0:
        _rebuild_clusters(state)
    return state


def update_latent_V(state, data, rng):
    """Resample every latent threshold from its Polya-urn full conditional."""
    if data.n == 0:
        return state
    t = data.W @ state.beta1
    seed = int(rng.integers(0, 2 ** 31 - 1))
    _urn_sweep(state.V, state.labels, state.values, state.counts, state.free,
               state.slots, t, data.delta, state.alpha1, seed)
    return state


def _consistent(delta, V, t):
    ok1 = V <= t
    return np.all(np.where(delta == 1, ok1, ~ok1))


def update_beta1(state, data, hyper, rng):
    """Random-walk Metropolis on beta1.

    Proposals breaking sign consistency with the current V have zero
    likelihood and are rejected outright; otherwise only the Normal prior
    ratio enters (the constrained likelihood is flat).
    """
    prior_chol = np.linalg.cholesky(hyper.S_beta1_0)
    step = state.mh_scale * (prior_chol @ rng.standard_normal(data.r))
    prop = state.beta1 + step
    state.mh_proposed += 1
    if data.n > 0:
        t_prop = data.W @ prop
        if not _consistent(data.delta, state.V, t_prop):
            return state
    Sinv = np.linalg.inv(hyper.S_beta1_0)
    d_cur = state.beta1 - hyper.beta1_0
    d_prop = prop - hyper.beta1_0
    log_ratio = -0.5 * (d_prop @ Sinv @ d_prop - d_cur @ Sinv @ d_cur)
    if np.log(rng.random()) < log_ratio:
        state.beta1 = prop
        state.mh_accepted += 1
    return state


def refresh_beta1(state, data, hyper, rng, n_steps=None):
    """Hit-and-run Gibbs refresh of the beta1 full conditional.

    Given V the conditional is the Normal prior truncated to the
    sign-consistency polytope {beta: V_i <= w_i'beta iff delta_i = 1}. Along
    any line beta + s*d the conditional of s is a univariate truncated Normal
    whose interval comes from the n linear constraints, so it can be drawn
    exactly. Random prior-whitened directions are used, plus one step along
    the current coefficient vector itself: the polytope is close to a cone,
    and that radial direction is the one a small-step random walk cannot
    traverse. Leaves the same conditional invariant as the Metropolis kernel.
    """
    r = data.r
    if n_steps is None:
        n_steps = max(4, r)
    prec = np.linalg.inv(hyper.S_beta1_0)
    prior_chol = np.linalg.cholesky(hyper.S_beta1_0)
    beta = state.beta1.copy()
    t = data.W @ beta if data.n > 0 else np.empty(0)
    Wd_cache = data.W if data.n > 0 else None
    for step in range(n_steps + 1):
        if step == n_steps:
            norm = float(np.linalg.norm(beta))
            if norm < 1e-12:
                break
            d = beta / norm
        else:
            d = prior_chol @ rng.standard_normal(r)
            d /= float(np.linalg.norm(d))
        dPd = float(d @ prec @ d)
        s_mean = -float(d @ prec @ (beta - hyper.beta1_0)) / dPd
        s_sd = math.sqrt(1.0 / dPd)
        lo, hi = -np.inf, np.inf
        if data.n > 0:
            wd = Wd_cache @ d
            c = state.V - t
            d1 = data.delta == 1
            pos = wd > 0
            neg = wd < 0
            # delta=1: s*wd >= c ; delta=0: s*wd < c
            bounds_lo = np.concatenate([c[d1 & pos] / wd[d1 & pos],
                                        c[~d1 & neg] / wd[~d1 & neg]])
            bounds_hi = np.concatenate([c[d1 & neg] / wd[d1 & neg],
                                        c[~d1 & pos] / wd[~d1 & pos]])
            if bounds_lo.size:
                lo = float(bounds_lo.max())
            if bounds_hi.size:
                hi = float(bounds_hi.min())
        a = ndtr((lo - s_mean) / s_sd)
        b = ndtr((hi - s_mean) / s_sd)
        if b - a <= 1e-14:
            continue  # interval mass numerically zero; stay put
        u = a + rng.random() * (b - a)
        u = min(max(u, 1e-300), 1.0 - 1e-16)
        s = s_mean + s_sd * ndtri(u)
        s = min(max(s, lo), hi)
        if step == n_steps:
            # the radial line passes through the origin, so the conditional
            # along it carries the polar Jacobian |norm + s|^(r-1); correct
            # the truncated-Normal proposal with an independence-MH accept
            radius = abs(norm + s)
            if radius <= 0.0:
                continue
            log_ratio = (r - 1) * (math.log(radius) - math.log(norm))
            if math.log(rng.random() + 1e-300) >= log_ratio:
                continue
        cand = beta + s * d
        t_cand = t + s * wd if data.n > 0 else t
        if data.n == 0 or _consistent(data.delta, state.V, t_cand):
            beta = cand
            t = t_cand
    state.beta1 = beta
    return state


def _logistic_logpdf(v):
    a = -np.abs(v)
    return a - 2.0 * np.log1p(np.exp(a))


def _occupied_slots(state):
    return np.nonzero(state.counts[: state.slots[0]])[0]


def _constant_column(W):
    """Index and value of a constant nonzero covariate column (intercept)."""
    for j in range(W.shape[1]):
        col = W[:, j]
        if col[0] != 0.0 and np.all(col == col[0]):
            return j, float(col[0])
    return None, 0.0


def update_joint_shift(state, data, hyper, rng, step=1.0):
    """MH translation of (intercept, all cluster values) together.

    Shifting the intercept by c and every distinct latent value by c leaves
    all sign-consistency indicators unchanged, so the acceptance ratio is the
    beta prior ratio times the baseline-density ratio of the shifted cluster
    values. This direction is only weakly identified and is the slowest one
    for the within-polytope moves, so it gets its own move.
    """
    if data.n == 0:
        return state
    j, w_const = _constant_column(data.W)
    if j is None:
        return state
    c = step * rng.standard_normal()
    prop = state.beta1.copy()
    prop[j] += c / w_const
    idx = _occupied_slots(state)
    vals = state.values[idx]
    Sinv = np.linalg.inv(hyper.S_beta1_0)
    d_cur = state.beta1 - hyper.beta1_0
    d_prop = prop - hyper.beta1_0
    log_ratio = (-0.5 * (d_prop @ Sinv @ d_prop - d_cur @ Sinv @ d_cur)
                 + float(np.sum(_logistic_logpdf(vals + c)
                                - _logistic_logpdf(vals))))
    if np.log(rng.random()) < log_ratio:
        new_values = state.values.copy()
        new_values[idx] = vals + c
        new_V = new_values[state.labels]
        if _consistent(data.delta, new_V, data.W @ prop):
            state.beta1 = prop
            state.values = new_values
            state.V = new_V
    return state


def update_joint_scale(state, data, hyper, rng, step=0.3):
    """MH rescaling of (beta1, all cluster values) together.

    For c > 0, (beta, V) -> (c beta, c V) preserves every indicator; the
    ratio carries the beta prior, the baseline densities, and the c^(r + d)
    Jacobian of the log-scale proposal. This traverses the scale ridge the
    polytope-constrained moves cannot cross.
    """
    if data.n == 0:
        return state
    eps = step * rng.standard_normal()
    c = np.exp(eps)
    prop = c * state.beta1
    idx = _occupied_slots(state)
    vals = state.values[idx]
    Sinv = np.linalg.inv(hyper.S_beta1_0)
    d_cur = state.beta1 - hyper.beta1_0
    d_prop = prop - hyper.beta1_0
    log_ratio = (-0.5 * (d_prop @ Sinv @ d_prop - d_cur @ Sinv @ d_cur)
                 + float(np.sum(_logistic_logpdf(c * vals)
                                - _logistic_logpdf(vals)))
                 + (data.r + idx.size) * eps)
    if np.log(rng.random()) < log_ratio:
        new_values = state.values.copy()
        new_values[idx] = c * vals
        new_V = new_values[state.labels]
        if _consistent(data.delta, new_V, data.W @ prop):
            state.beta1 = prop
            state.values = new_values
            state.V = new_V
    return state


def update_alpha1(state, data, hyper, rng):
    """Escobar-West two-step augmentation for the DP precision."""
    n = data.n
    if n == 0:
        state.alpha1 = rng.gamma(hyper.a1_0, 1.0 / hyper.b1_0)
        return state
    d = state.n_clusters
    eta = rng.beta(state.alpha1 + 1.0, n)
    rate = hyper.b1_0 - np.log(eta)
    odds = (hyper.a1_0 + d - 1.0) / (n * rate)
    if rng.random() < odds / (1.0 + odds):
        shape = hyper.a1_0 + d
    else:
        shape = hyper.a1_0 + d - 1.0
    state.alpha1 = rng.gamma(shape, 1.0 / rate)
    return state


def run_part1(data, hyper, schedule, rng, chain_id=0, debug_checks=False):
    """Full Gibbs run for one chain; returns draws plus per-draw scalar traces.

    MH proposal scale adapts toward 20-40% acceptance during burn-in only.
    """
    state = init_state(data, hyper, rng)
    total = schedule.burn_in + schedule.keep * schedule.thin
    S = schedule.keep
    draws = Part1Draws(
        beta1=np.empty((S, data.r)),
        alpha1=np.empty(S),
        V=np.empty((S, data.n)),
        n_clusters=np.empty(S, dtype=np.int64),
        n=data.n,
    )
    acc_trace = np.empty(S)
    window_start = (0, 0)
    stored = 0
    for it in range(total):
        update_latent_V(state, data, rng)
        for _ in range(hyper.mh_refreshes):
            update_beta1(state, data, hyper, rng)
        refresh_beta1(state, data, hyper, rng)
        update_joint_shift(state, data, hyper, rng)
        update_joint_scale(state, data, hyper, rng)
        update_alpha1(state, data, hyper, rng)
        if debug_checks and data.n > 0:
            t = data.W @ state.beta1
            assert _consistent(data.delta, state.V, t)
            assert state.n_clusters == np.unique(state.V).size
        if hyper.adapt_mh and it < schedule.burn_in and (it + 1) % 50 == 0:
            acc = ((state.mh_accepted - window_start[0])
                   / max(1, state.mh_proposed - window_start[1]))
            if acc < 0.20:
                state.mh_scale *= 0.7
            elif acc > 0.40:
                state.mh_scale *= 1.4
            window_start = (state.mh_accepted, state.mh_proposed)
        if it >= schedule.burn_in and (it - schedule.burn_in + 1) % schedule.thin == 0:
            draws.beta1[stored] = state.beta1
            draws.alpha1[stored] = state.alpha1
            draws.V[stored] = state.V
            draws.n_clusters[stored] = state.n_clusters
            acc_trace[stored] = state.mh_acceptance
            stored += 1
    traces = {"alpha1": draws.alpha1.copy(),
              "n_clusters_part1": draws.n_clusters.astype(float),
              "mh_acceptance": acc_trace}
    for j in range(data.r):
        traces[f"beta1_{j}"] = draws.beta1[:, j].copy()
    return draws, traces


# -- posterior summaries -------------------------------------------------------

def _link_matrix(draws, grid):
    """Link value per (draw, grid point): posterior-predictive CDF of G1."""
    grid = np.asarray(grid, dtype=float)
    S = draws.n_draws
    out = np.empty((S, grid.size))
    n = draws.n
    F = logistic_cdf(grid)
    for s in range(S):
        a = draws.alpha1[s]
        counts = np.searchsorted(np.sort(draws.V[s]), grid, side="right")
        out[s] = (a * F + counts) / (a + n)
    return out


def estimated_link(draws, grid):
    """Posterior mean and 95% band of P(V <= t) on the grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        return np.empty(0), np.empty(0), np.empty(0)
    m = _link_matrix(draws, grid)
    return (m.mean(axis=0),
            np.percentile(m, 2.5, axis=0),
            np.percentile(m, 97.5, axis=0))


def expected_delta(draws, w_new):
    """Posterior mean and 95% band of P(delta = 1 | w_new)."""
    w_new = np.asarray(w_new, dtype=float).ravel()
    if w_new.size != draws.beta1.shape[1]:
        raise ValueError("w_new length does not match the fitted covariates")
    t = draws.beta1 @ w_new
    n = draws.n
    counts = np.array([np.count_nonzero(draws.V[s] <= t[s])
                       for s in range(draws.n_draws)])
    p = (draws.alpha1 * logistic_cdf(t) + counts) / (draws.alpha1 + n)
    return float(p.mean()), float(np.percentile(p, 2.5)), float(np.percentile(p, 97.5))


def expected_delta_many(draws, W_new):
    """Vectorized posterior-mean P(delta=1|w) for many units (means only plus bands)."""
    W_new = np.atleast_2d(np.asarray(W_new, dtype=float))
    T = draws.beta1 @ W_new.T                      # (S, nunits)
    Vs = np.sort(draws.V, axis=1)
    S = draws.n_draws
    counts = np.empty_like(T)
    for s in range(S):
        counts[s] = np.searchsorted(Vs[s], T[s], side="right")
    P = (draws.alpha1[:, None] * logistic_cdf(T) + counts) / (
        draws.alpha1[:, None] + draws.n)
    return (P.mean(axis=0),
            np.percentile(P, 2.5, axis=0),
            np.percentile(P, 97.5, axis=0))
