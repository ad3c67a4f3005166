"""Convergence assessment and posterior summary tables."""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TraceMatrix",
    "gelman_rubin",
    "psrf_report",
    "posterior_table",
    "monitored_inventory",
]

PSRF_THRESHOLD = 1.1

# parameters whose draws are integer counts: percentiles reported without
# interpolation
_COUNT_PARAMS = ("n_clusters_part1", "n_clusters_part2")


@dataclass
class TraceMatrix:
    """Thinned post-burn-in values for one parameter, one row per chain."""

    name: str
    values: np.ndarray  # (chains, draws)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] < 10:
            raise ValueError("each chain needs at least 10 draws")


def gelman_rubin(trace):
    """Potential scale reduction factor, sqrt(((N-1)/N W + B/N) / W)."""
    values = trace.values if isinstance(trace, TraceMatrix) else np.atleast_2d(trace)
    J, N = values.shape
    if J < 2:
        raise ValueError("Gelman-Rubin needs at least 2 chains; run with chains >= 2")
    W = float(np.mean(np.var(values, axis=1, ddof=1)))
    B = float(N * np.var(np.mean(values, axis=1), ddof=1))
    if W == 0.0:
        return 1.0 if B == 0.0 else float("inf")
    return float(np.sqrt(((N - 1.0) / N * W + B / N) / W))


def psrf_report(traces_by_chain, names=None):
    """PSRF per monitored parameter with a pass flag at threshold 1.1.

    traces_by_chain: list (one per chain) of dicts name -> 1-D draw array.
    """
    if names is None:
        names = sorted(traces_by_chain[0])
    rows = []
    for name in names:
        values = np.vstack([chain[name] for chain in traces_by_chain])
        r = gelman_rubin(TraceMatrix(name, values))
        rows.append({"name": name, "psrf": r, "converged": r < PSRF_THRESHOLD})
    return rows


def posterior_table(draws, monitored):
    """Rows of (name, mean, 2.5%, 97.5%) for the monitored parameters.

    draws: dict name -> 1-D array of pooled post-burn-in values. Percentiles
    use linear order-statistic interpolation, except cluster counts which are
    reported as actual integer draws (nearest order statistic).
    """
    rows = []
    for name in monitored:
        if name not in draws:
            raise KeyError(f"unknown monitored parameter: {name}")
        x = np.asarray(draws[name], dtype=float).ravel()
        if x.size < 1:
            raise ValueError(f"no draws for {name}")
        method = "nearest" if name in _COUNT_PARAMS else "linear"
        lo = float(np.percentile(x, 2.5, method=method))
        hi = float(np.percentile(x, 97.5, method=method))
        rows.append({"name": name, "mean": float(x.mean()), "lo": lo, "hi": hi})
    return rows


def monitored_inventory(r, k, x_names=None):
    """Default monitored-parameter set: occurrence coefficients, both DP
    precisions and cluster counts, and the intensity baseline parameters."""
    if x_names is None:
        x_names = [f"x{i}" for i in range(k - 1)]
    names = ["z"] + list(x_names)
    out = [f"beta1_{j}" for j in range(r)]
    out += ["alpha1", "n_clusters_part1"]
    out += [f"m1_{names[j]}" for j in range(k)]
    out += ["k0"]
    for a in range(k):
        out.append(f"psi1_{names[a]}")
    for a in range(k):
        for b in range(a + 1, k):
            out.append(f"psi1_{names[a]}_{names[b]}")
    out += ["alpha2", "n_clusters_part2"]
    return out
