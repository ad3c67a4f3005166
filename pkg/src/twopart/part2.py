"""Intensity part: truncated blocked Gibbs for a DP mixture of k-variate
Normals on d_j = (z_j, x_j')' with a Normal-Inverse-Wishart baseline and
hyperpriors, plus extraction of the induced conditional density f(z | x)
as a weight-dependent mixture of linear-Gaussian experts.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .distributions import (
    NiwParams,
    cholesky_spd,
    mvn_logpdf,
    sample_mvnormal,
    MvNormalParams,
    sample_niw,
    sample_wishart,
    stick_breaking,
)

__all__ = [
    "Part2Data",
    "Atom",
    "Part2State",
    "Part2Draws",
    "niw_posterior",
    "init_state",
    "update_allocations",
    "update_atoms",
    "update_sticks_and_alpha2",
    "update_baseline",
    "run_part2",
    "conditional_expert",
    "conditional_density",
    "conditional_density_grid",
    "conditional_mean",
    "predictive_grid",
    "local_weights",
    "density_draw_matrix",
]


@dataclass
class Part2Data:
    """Joint rows d_j = (z_j, x_j'); only positive-response units enter."""

    D: np.ndarray

    def __post_init__(self):
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        if self.m > 0:
            if np.any(self.D[:, 0] <= 0):
                raise ValueError("column 0 of D must be strictly positive (z > 0)")
            if self.m < self.k + 2:
                raise ValueError("need m >= k + 2 positive-response rows")

    @property
    def m(self):
        return self.D.shape[0]

    @property
    def k(self):
        return self.D.shape[1]


@dataclass
class Atom:
    """One mixture component: mean and SPD covariance with cached Cholesky."""

    mu: np.ndarray
    Sigma: np.ndarray
    chol: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        self.chol = cholesky_spd(self.Sigma, "Sigma")


@dataclass
class Part2State:
    mu: np.ndarray        # (L, k)
    Sigma: np.ndarray     # (L, k, k)
    chol: np.ndarray      # (L, k, k) cached Cholesky factors
    v: np.ndarray         # (L-1,) stick fractions
    weights: np.ndarray   # (L,)
    labels: np.ndarray    # (m,)
    alpha2: float
    m1: np.ndarray        # (k,)
    k0: float
    Psi1: np.ndarray      # (k, k)
    underflow_warnings: int = 0

    @property
    def L(self):
        return self.weights.size

    def occupied(self):
        return np.unique(self.labels) if self.labels.size else np.empty(0, dtype=int)

    @property
    def n_occupied(self):
        return int(self.occupied().size)

    def atom(self, l):
        return Atom(self.mu[l], self.Sigma[l])


@dataclass
class Part2Draws:
    """Thinned post-burn-in snapshots of the intensity sampler."""

    weights: np.ndarray    # (S, L)
    mu: np.ndarray         # (S, L, k)
    Sigma: np.ndarray      # (S, L, k, k)
    alpha2: np.ndarray     # (S,)
    m1: np.ndarray         # (S, k)
    k0: np.ndarray         # (S,)
    Psi1: np.ndarray       # (S, k, k)
    n_occupied: np.ndarray  # (S,)

    @property
    def n_draws(self):
        return self.alpha2.size

    @property
    def k(self):
        return self.m1.shape[1]

    def concat(self, other):
        return Part2Draws(
            weights=np.concatenate([self.weights, other.weights]),
            mu=np.concatenate([self.mu, other.mu]),
            Sigma=np.concatenate([self.Sigma, other.Sigma]),
            alpha2=np.concatenate([self.alpha2, other.alpha2]),
            m1=np.concatenate([self.m1, other.m1]),
            k0=np.concatenate([self.k0, other.k0]),
            Psi1=np.concatenate([self.Psi1, other.Psi1]),
            n_occupied=np.concatenate([self.n_occupied, other.n_occupied]),
        )


# -- conjugate updates ---------------------------------------------------------

def niw_posterior(m1, k0, nu1, Psi1, X):
    """NIW posterior parameters given the rows of X assigned to a component."""
    X = np.atleast_2d(X)
    n = X.shape[0]
    if n == 0:
        return np.asarray(m1, dtype=float), float(k0), float(nu1), np.asarray(Psi1, dtype=float)
    dbar = X.mean(axis=0)
    kappa_star = k0 + n
    m_star = (k0 * np.asarray(m1) + n * dbar) / kappa_star
    nu_star = nu1 + n
    dev = X - dbar
    scatter = dev.T @ dev
    shift = dbar - np.asarray(m1)
    Psi_star = np.asarray(Psi1) + scatter + (k0 * n / kappa_star) * np.outer(shift, shift)
    return m_star, float(kappa_star), float(nu_star), Psi_star


def init_state(data, hyper, rng):
    """Spread initial labels over a few components; baseline at prior centers."""
    m, k, L = data.m, data.k, hyper.truncation_L
    m1 = hyper.m2.copy()
    k0 = hyper.tau1 / hyper.tau2
    Psi1 = hyper.Psi2.copy()
    alpha2 = hyper.a2_0 / hyper.b2_0
    labels = (rng.integers(0, min(L, 5), size=m) if m > 0
              else np.empty(0, dtype=np.int64))
    mu = np.empty((L, k))
    Sigma = np.empty((L, k, k))
    chol = np.empty((L, k, k))
    prior = NiwParams(m1, k0, hyper.nu1, Psi1)
    for l in range(L):
        mu[l], Sigma[l] = sample_niw(rng, prior)
        chol[l] = cholesky_spd(Sigma[l])
    v = np.full(L - 1, 1.0 / (1.0 + alpha2))
    state = Part2State(mu=mu, Sigma=Sigma, chol=chol, v=v,
                       weights=stick_breaking(v), labels=labels,
                       alpha2=alpha2, m1=m1, k0=k0, Psi1=Psi1)
    if m > 0:
        update_atoms(state, data, hyper, rng)
    return state


def update_allocations(state, data, rng):
    """Categorical label draw per row, log-space with max-subtraction."""
    if data.m == 0:
        return state
    L = state.L
    logw = np.empty((data.m, L))
    with np.errstate(divide="ignore"):
        logweights = np.where(state.weights > 0, np.log(state.weights), -np.inf)
    for l in range(L):
        logw[:, l] = logweights[l] + mvn_logpdf(data.D, state.mu[l], state.chol[l])
    mx = logw.max(axis=1)
    bad = ~np.isfinite(mx)
    if np.any(bad):
        # total underflow: pin to the best component by raw log-density
        state.underflow_warnings += int(bad.sum())
        mx[bad] = 0.0
    p = np.exp(logw - mx[:, None])
    p /= p.sum(axis=1, keepdims=True)
    u = rng.random(data.m)
    state.labels = (np.cumsum(p, axis=1) < u[:, None]).sum(axis=1).astype(np.int64)
    np.clip(state.labels, 0, L - 1, out=state.labels)
    return state


def update_atoms(state, data, hyper, rng):
    """Conjugate NIW draw per component; empty components refresh from the prior."""
    for l in range(state.L):
        members = data.D[state.labels == l] if data.m > 0 else np.empty((0, data.k))
        m_star, kappa_star, nu_star, Psi_star = niw_posterior(
            state.m1, state.k0, hyper.nu1, state.Psi1, members)
        try:
            mu_l, Sigma_l = sample_niw(rng, NiwParams(m_star, kappa_star, nu_star, Psi_star))
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"atom update failed for component {l}: {exc}")
        state.mu[l] = mu_l
        state.Sigma[l] = Sigma_l
        state.chol[l] = cholesky_spd(Sigma_l)
    return state


def update_sticks_and_alpha2(state, hyper, rng):
    """Stick Beta conditionals, weight refresh, truncation-exact alpha2 draw."""
    L = state.L
    counts = np.bincount(state.labels, minlength=L) if state.labels.size else np.zeros(L, dtype=int)
    tail = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0.0]])
    for l in range(L - 1):
        state.v[l] = rng.beta(1.0 + counts[l], state.alpha2 + tail[l])
    np.clip(state.v, 1e-12, 1.0 - 1e-12, out=state.v)
    state.weights = stick_breaking(state.v)
    rate = hyper.b2_0 - np.sum(np.log1p(-state.v))
    state.alpha2 = rng.gamma(hyper.a2_0 + L - 1.0, 1.0 / rate)
    return state


def update_baseline(state, hyper, rng):
    """Conjugate full conditionals for (m1, k0, Psi1) given the occupied atoms."""
    occ = state.occupied()
    d = occ.size
    k = state.m1.size
    eye = np.eye(k)
    S2_inv = np.linalg.inv(hyper.S2)
    if d == 0:
        state.m1 = sample_mvnormal(rng, MvNormalParams(hyper.m2, hyper.S2))
        state.k0 = rng.gamma(hyper.tau1 / 2.0, 2.0 / hyper.tau2)
        state.Psi1 = sample_wishart(rng, hyper.nu2, hyper.Psi2)
        return state
    Sig_inv = np.empty((d, k, k))
    for i, l in enumerate(occ):
        Linv = solve_triangular(state.chol[l], eye, lower=True, check_finite=False)
        Sig_inv[i] = Linv.T @ Linv
    sum_inv = Sig_inv.sum(axis=0)
    # m1
    prec = S2_inv + state.k0 * sum_inv
    cov = np.linalg.inv(prec)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (S2_inv @ hyper.m2
                  + state.k0 * np.einsum("ijk,ik->j", Sig_inv, state.mu[occ]))
    state.m1 = sample_mvnormal(rng, MvNormalParams(mean, cov))
    # k0
    devs = state.mu[occ] - state.m1
    quad = np.einsum("ij,ijk,ik->", devs, Sig_inv, devs)
    state.k0 = rng.gamma((hyper.tau1 + d * k) / 2.0, 2.0 / (hyper.tau2 + quad))
    # Psi1
    Psi2_inv = np.linalg.inv(hyper.Psi2)
    scale = np.linalg.inv(Psi2_inv + sum_inv)
    scale = 0.5 * (scale + scale.T)
    state.Psi1 = sample_wishart(rng, hyper.nu2 + d * hyper.nu1, scale)
    return state


def run_part2(data, hyper, schedule, rng, chain_id=0):
    """Full blocked-Gibbs run for one chain; returns draws plus scalar traces."""
    state = init_state(data, hyper, rng)
    total = schedule.burn_in + schedule.keep * schedule.thin
    S = schedule.keep
    k, L = data.k, hyper.truncation_L
    draws = Part2Draws(
        weights=np.empty((S, L)),
        mu=np.empty((S, L, k)),
        Sigma=np.empty((S, L, k, k)),
        alpha2=np.empty(S),
        m1=np.empty((S, k)),
        k0=np.empty(S),
        Psi1=np.empty((S, k, k)),
        n_occupied=np.empty(S, dtype=np.int64),
    )
    stored = 0
    for it in range(total):
        update_allocations(state, data, rng)
        update_atoms(state, data, hyper, rng)
        update_sticks_and_alpha2(state, hyper, rng)
        update_baseline(state, hyper, rng)
        if it >= schedule.burn_in and (it - schedule.burn_in + 1) % schedule.thin == 0:
            draws.weights[stored] = state.weights
            draws.mu[stored] = state.mu
            draws.Sigma[stored] = state.Sigma
            draws.alpha2[stored] = state.alpha2
            draws.m1[stored] = state.m1
            draws.k0[stored] = state.k0
            draws.Psi1[stored] = state.Psi1
            draws.n_occupied[stored] = state.n_occupied if data.m > 0 else 0
            stored += 1
    if data.m > 0 and draws.weights[:, -1].mean() > 1e-3:
        warnings.warn(
            "posterior mean of the last stick weight exceeds 1e-3; "
            "increase truncation_L")
    traces = {"alpha2": draws.alpha2.copy(),
              "k0": draws.k0.copy(),
              "n_clusters_part2": draws.n_occupied.astype(float)}
    names = ["z"] + [f"x{i}" for i in range(k - 1)] if k > 1 else ["z"]
    for j in range(k):
        traces[f"m1_{names[j]}"] = draws.m1[:, j].copy()
    for a in range(k):
        for b in range(a, k):
            key = f"psi1_{names[a]}{'_' + names[b] if b != a else ''}"
            traces[key] = draws.Psi1[:, a, b].copy()
    return draws, traces


# -- induced conditional density ------------------------------------------------

def conditional_expert(atom):
    """Linear-Gaussian expert (intercept, slope vector, residual variance)
    implied by partitioning the component's joint Gaussian at column 0."""
    k = atom.mu.size
    mu1 = atom.mu[0]
    mu2 = atom.mu[1:]
    s11 = atom.Sigma[0, 0]
    S12 = atom.Sigma[0, 1:]
    S22 = atom.Sigma[1:, 1:]
    if k == 1:
        return float(mu1), np.empty(0), float(s11)
    beta2 = np.linalg.solve(S22, S12)
    beta0 = mu1 - beta2 @ mu2
    sigma2 = s11 - beta2 @ S12
    return float(beta0), beta2, float(sigma2)


def _x_log_weights(weights, mu, Sigma, x):
    """log( omega_l * Normal_p(x | mu_2l, Sigma_22l) ) per component."""
    L = weights.size
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.full(L, -np.inf)
    for l in range(L):
        if weights[l] <= 0.0:
            continue
        S22 = Sigma[l][1:, 1:]
        chol22 = cholesky_spd(S22)
        out[l] = np.log(weights[l]) + mvn_logpdf(x, mu[l][1:], chol22)[0]
    return out


def local_weights(weights, mu, Sigma, x):
    """Predictor-dependent mixture weights omega_l(x), summing to 1."""
    lw = _x_log_weights(weights, mu, Sigma, x)
    denom = logsumexp(lw)
    if not np.isfinite(denom):
        return None
    return np.exp(lw - denom)


def conditional_density(z, x, state_or_draw):
    """f(z | x) for one state: weight-dependent mixture of expert densities."""
    weights, mu, Sigma = _unpack(state_or_draw)
    wx = local_weights(weights, mu, Sigma, x)
    if wx is None:
        return np.zeros_like(np.asarray(z, dtype=float)) if np.ndim(z) else 0.0
    z = np.asarray(z, dtype=float)
    dens = np.zeros_like(z, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    for l in range(weights.size):
        if wx[l] <= 0.0:
            continue
        beta0, beta2, sigma2 = conditional_expert(Atom(mu[l], Sigma[l]))
        mean = beta0 + (beta2 @ x if beta2.size else 0.0)
        dens = dens + wx[l] * np.exp(
            -0.5 * (z - mean) ** 2 / sigma2) / np.sqrt(2.0 * np.pi * sigma2)
    return dens if z.ndim else float(dens)


def conditional_mean(x, state_or_draw):
    """E(z | x) = sum_l omega_l(x) (beta0_l + x' beta2_l)."""
    weights, mu, Sigma = _unpack(state_or_draw)
    wx = local_weights(weights, mu, Sigma, x)
    if wx is None:
        return np.nan
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = 0.0
    for l in range(weights.size):
        if wx[l] <= 0.0:
            continue
        beta0, beta2, _ = conditional_expert(Atom(mu[l], Sigma[l]))
        total += wx[l] * (beta0 + (beta2 @ x if beta2.size else 0.0))
    return float(total)


def _unpack(state_or_draw):
    if isinstance(state_or_draw, Part2State):
        return state_or_draw.weights, state_or_draw.mu, state_or_draw.Sigma
    return state_or_draw  # (weights, mu, Sigma) triple


def density_draw_matrix(draws, x, z_grid):
    """f(z | x) per stored draw per grid point: (S, len(z_grid))."""
    z_grid = np.asarray(z_grid, dtype=float)
    S = draws.n_draws
    out = np.empty((S, z_grid.size))
    for s in range(S):
        out[s] = conditional_density(z_grid, x, (draws.weights[s], draws.mu[s], draws.Sigma[s]))
    return out


def conditional_density_grid(draws, x, z_grid):
    """Posterior mean density and 95% band per grid point."""
    z_grid = np.asarray(z_grid, dtype=float)
    if z_grid.size == 0:
        return np.empty(0), np.empty(0), np.empty(0)
    if z_grid.size > 1 and np.any(np.diff(z_grid) <= 0):
        raise ValueError("z_grid must be strictly increasing")
    m = density_draw_matrix(draws, x, z_grid)
    return (m.mean(axis=0),
            np.percentile(m, 2.5, axis=0),
            np.percentile(m, 97.5, axis=0))


def predictive_grid(draws, x, n_points=241, span=6.0):
    """z-grid spanning +/- span posterior-predictive standard deviations."""
    S = draws.n_draws
    means = np.empty(S)
    second = np.empty(S)
    for s in range(S):
        triple = (draws.weights[s], draws.mu[s], draws.Sigma[s])
        wx = local_weights(*triple, x)
        if wx is None:
            means[s] = np.nan
            second[s] = np.nan
            continue
        mom1 = 0.0
        mom2 = 0.0
        for l in range(wx.size):
            if wx[l] <= 0.0:
                continue
            beta0, beta2, sigma2 = conditional_expert(Atom(draws.mu[s][l], draws.Sigma[s][l]))
            xv = np.atleast_1d(np.asarray(x, dtype=float))
            mean_l = beta0 + (beta2 @ xv if beta2.size else 0.0)
            mom1 += wx[l] * mean_l
            mom2 += wx[l] * (sigma2 + mean_l ** 2)
        means[s] = mom1
        second[s] = mom2
    center = np.nanmean(means)
    var = np.nanmean(second) - center ** 2
    sd = np.sqrt(max(var, 1e-12))
    return np.linspace(center - span * sd, center + span * sd, n_points)
