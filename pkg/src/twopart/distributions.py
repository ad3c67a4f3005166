"""Seedable sampling and density primitives shared by both samplers.

Everything here is a pure function of an explicit ``numpy.random.Generator``
(or of fixed parameters), so chains built on distinct streams are
reproducible and independent.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "RngStream",
    "MvNormalParams",
    "NiwParams",
    "logistic_cdf",
    "logistic_quantile",
    "truncated_logistic_sample",
    "stick_breaking",
    "cholesky_spd",
    "sample_mvnormal",
    "mvn_logpdf",
    "sample_wishart",
    "sample_inverse_wishart",
    "sample_niw",
    "categorical_from_log_weights",
]

_LOG_2PI = np.log(2.0 * np.pi)


class RngStream:
    """One reproducible random stream per chain.

    Streams with the same seed but different ``stream_id`` are statistically
    independent (SeedSequence spawn keys).
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.generator = np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        )


def cholesky_spd(a, name="matrix"):
    """Lower Cholesky factor with jitter escalation 1e-10 -> 1e-6.

    Conditionally-updated covariances can be numerically semi-definite;
    escalating jitter recovers those, anything worse is a hard error.
    """
    a = np.asarray(a, dtype=float)
    scale = np.mean(np.diag(a))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(a + jitter * scale * np.eye(a.shape[0]))
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = 1e-10
            elif jitter < 1e-6:
                jitter *= 100.0
            else:
                raise np.linalg.LinAlgError(
                    f"{name} is not positive definite (jitter escalation failed)"
                )


@dataclass
class MvNormalParams:
    """Multivariate normal parameters with a cached Cholesky factor."""

    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if self.covariance.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match mean length")
        self.chol = cholesky_spd(self.covariance, "covariance")


@dataclass
class NiwParams:
    """Normal-Inverse-Wishart parameters (location, precision scale, dof, scale matrix)."""

    m: np.ndarray
    kappa: float
    nu: float
    Psi: np.ndarray

    def __post_init__(self):
        self.m = np.atleast_1d(np.asarray(self.m, dtype=float))
        self.Psi = np.atleast_2d(np.asarray(self.Psi, dtype=float))
        k = self.m.size
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.nu <= k - 1:
            raise ValueError(f"nu must exceed k-1 = {k - 1}")
        if self.Psi.shape != (k, k):
            raise ValueError("Psi shape does not match m length")
        cholesky_spd(self.Psi, "Psi")


def logistic_cdf(v):
    """Standard logistic CDF, stable over the whole double range."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    if out.ndim == 0:
        return float(out)
    return out


def logistic_quantile(p):
    """Inverse of the standard logistic CDF."""
    p = np.asarray(p, dtype=float)
    out = np.log(p) - np.log1p(-p)
    if out.ndim == 0:
        return float(out)
    return out


def truncated_logistic_sample(rng, lower=-np.inf, upper=np.inf):
    """Inverse-CDF draw from Logistic(0, 1) restricted to (lower, upper)."""
    if not lower < upper:
        raise ValueError("lower must be strictly below upper")
    p_lo = logistic_cdf(lower) if np.isfinite(lower) else 0.0
    p_hi = logistic_cdf(upper) if np.isfinite(upper) else 1.0
    u = p_lo + rng.random() * (p_hi - p_lo)
    if u <= 0.0:
        # deep lower tail underflow: pin to the nearest representable point
        return lower if np.isfinite(lower) else -745.0
    if u >= 1.0:
        return upper if np.isfinite(upper) else 745.0
    x = logistic_quantile(u)
    # guard against round-off spilling outside the interval
    return float(min(max(x, np.nextafter(lower, upper)), np.nextafter(upper, lower)))


def stick_breaking(v):
    """Weights from stick-breaking fractions; output lives on the simplex.

    Input has length L-1, output length L; the last weight absorbs the
    remaining stick so the sum is exact.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0.0) or np.any(v >= 1.0):
        raise ValueError("stick-breaking fractions must lie in (0, 1)")
    L = v.size + 1
    w = np.empty(L)
    remaining = 1.0
    for l in range(L - 1):
        w[l] = v[l] * remaining
        remaining *= 1.0 - v[l]
    w[L - 1] = remaining
    return w


def sample_mvnormal(rng, params):
    """Draw mean + L z with L the cached Cholesky factor."""
    z = rng.standard_normal(params.mean.size)
    return params.mean + params.chol @ z


def mvn_logpdf(x, mean, chol):
    """Log-density of Normal_k(mean, L L') at rows of x (vectorized)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    dev = x - mean
    sol = solve_triangular(chol, dev.T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", sol, sol)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    k = mean.size
    return -0.5 * (k * _LOG_2PI + logdet + maha)


def sample_wishart(rng, nu, scale):
    """Wishart_k(nu, scale) draw via the Bartlett decomposition."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    k = scale.shape[0]
    if nu <= k - 1:
        raise ValueError(f"nu must exceed k-1 = {k - 1}")
    L = cholesky_spd(scale, "Wishart scale")
    A = np.zeros((k, k))
    for i in range(k):
        A[i, i] = np.sqrt(rng.chisquare(nu - i))
    idx = np.tril_indices(k, -1)
    A[idx] = rng.standard_normal(len(idx[0]))
    LA = L @ A
    return LA @ LA.T


def sample_inverse_wishart(rng, nu, Psi):
    """Inverse-Wishart_k(nu, Psi): Wishart on Psi^-1, then inversion."""
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    L = cholesky_spd(Psi, "Psi")
    eye = np.eye(Psi.shape[0])
    Linv = solve_triangular(L, eye, lower=True, check_finite=False)
    Psi_inv = Linv.T @ Linv
    W = sample_wishart(rng, nu, Psi_inv)
    Wc = cholesky_spd(W, "Wishart draw")
    Winv = solve_triangular(Wc, eye, lower=True, check_finite=False)
    out = Winv.T @ Winv
    return 0.5 * (out + out.T)


def sample_niw(rng, params):
    """(mu, Sigma) draw: Sigma ~ IW(nu, Psi), mu | Sigma ~ N(m, Sigma/kappa)."""
    Sigma = sample_inverse_wishart(rng, params.nu, params.Psi)
    chol = cholesky_spd(Sigma, "Sigma")
    mu = params.m + (chol @ rng.standard_normal(params.m.size)) / np.sqrt(params.kappa)
    return mu, Sigma


def categorical_from_log_weights(rng, log_w):
    """Single categorical draw from unnormalized log-weights (max-subtracted)."""
    log_w = np.asarray(log_w, dtype=float)
    p = np.exp(log_w - np.max(log_w))
    p /= p.sum()
    return int(np.searchsorted(np.cumsum(p), rng.random()))
