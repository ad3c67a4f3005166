"""Run orchestration: fit both parts across chains, persist draws and
diagnostics, and rebuild predictions from a run directory.

Every output is delimited text with a provenance header line (seed and
config hash), so identical inputs reproduce byte-identical run directories.
"""

import hashlib
import os

import numpy as np

from . import diagnostics as diag
from . import part1 as p1
from . import part2 as p2
from . import predictive as pred
from .config import config_to_text, validate_or_raise
from .dataio import SemicontinuousDataset, _float_str
from .distributions import RngStream

__all__ = ["SamplerError", "run_fit", "run_predict", "load_run"]

_DELIM = "\t"


class SamplerError(RuntimeError):
    pass


def _config_hash(config):
    return hashlib.sha256(config_to_text(config).encode()).hexdigest()[:16]


def _provenance(config):
    return f"# seed={config.schedule.seed} config={_config_hash(config)}\n"


def _write_table(path, header, rows, provenance):
    with open(path, "w") as fh:
        fh.write(provenance)
        fh.write(_DELIM.join(header) + "\n")
        for row in rows:
            fh.write(_DELIM.join(row) + "\n")


def _write_matrix(path, mat, provenance):
    mat = np.atleast_2d(mat)
    with open(path, "w") as fh:
        fh.write(provenance)
        for row in mat:
            fh.write(_DELIM.join(_float_str(v) for v in row) + "\n")


def _read_matrix(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            rows.append([float(t) for t in line.split()])
    return np.array(rows)


def split_dataset(dataset, fit_fraction, seed):
    """Seeded fit/predict split; returns (fit subset, holdout subset, mask)."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    n = dataset.n
    n_fit = int(round(fit_fraction * n))
    perm = rng.permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[perm[:n_fit]] = True
    return dataset.subset(mask), dataset.subset(~mask), mask


def run_fit(config, dataset, out_dir):
    """Execute both samplers for the configured schedule across chains.

    Writes draws, per-chain scalar traces, a posterior summary table, a PSRF
    report (when chains >= 2), fitted occurrence probabilities, and the
    resolved config echo into out_dir.
    """
    validate_or_raise(config)
    os.makedirs(out_dir, exist_ok=True)
    prov = _provenance(config)
    with open(os.path.join(out_dir, "config_echo.txt"), "w") as fh:
        fh.write(config_to_text(config))

    sched = config.schedule
    data1 = p1.Part1Data(dataset.delta, dataset.W)
    data2 = p2.Part2Data(dataset.positive_joint(log_z=config.log_z))

    traces_by_chain = []
    draws1_all = None
    draws2_all = None
    for c in range(sched.chains):
        rng = RngStream(sched.seed, stream_id=c).generator
        try:
            draws1, tr1 = p1.run_part1(data1, config.part1, sched, rng, chain_id=c)
            draws2, tr2 = p2.run_part2(data2, config.part2, sched, rng, chain_id=c)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise SamplerError(f"chain {c}: {exc}")
        traces = {**tr1, **tr2}
        traces_by_chain.append(traces)
        draws1_all = draws1 if draws1_all is None else draws1_all.concat(draws1)
        draws2_all = draws2 if draws2_all is None else draws2_all.concat(draws2)
        _persist_chain(out_dir, c, draws1, draws2, traces, prov)

    # diagnostics over pooled chains
    monitored = diag.monitored_inventory(data1.r, data2.k)
    pooled = {name: np.concatenate([tc[name] for tc in traces_by_chain])
              for name in traces_by_chain[0]}
    table = diag.posterior_table(pooled, monitored)
    _write_table(
        os.path.join(out_dir, "posterior_table.txt"),
        ["parameter", "mean", "lo95", "hi95"],
        [[row["name"], _float_str(row["mean"]), _float_str(row["lo"]), _float_str(row["hi"])]
         for row in table], prov)
    if sched.chains >= 2:
        report = diag.psrf_report(traces_by_chain, monitored)
        _write_table(
            os.path.join(out_dir, "psrf_report.txt"),
            ["parameter", "psrf", "converged"],
            [[row["name"], _float_str(row["psrf"]), "pass" if row["converged"] else "fail"]
             for row in report], prov)

    # fitted occurrence probabilities on the training units
    p_mean, p_lo, p_hi = p1.expected_delta_many(draws1_all, dataset.W)
    _write_table(
        os.path.join(out_dir, "fitted_probs.txt"),
        ["id", "delta", "p_positive", "lo95", "hi95"],
        [[str(dataset.ids[i]), str(int(dataset.delta[i])),
          _float_str(p_mean[i]), _float_str(p_lo[i]), _float_str(p_hi[i])]
         for i in range(dataset.n)], prov)
    return draws1_all, draws2_all, traces_by_chain


def _persist_chain(out_dir, c, draws1, draws2, traces, prov):
    _write_matrix(os.path.join(out_dir, f"part1_beta1_chain{c}.txt"), draws1.beta1, prov)
    _write_matrix(os.path.join(out_dir, f"part1_V_chain{c}.txt"), draws1.V, prov)
    scalars = np.column_stack([draws1.alpha1, draws1.n_clusters.astype(float)])
    _write_matrix(os.path.join(out_dir, f"part1_scalars_chain{c}.txt"), scalars, prov)

    S, L, k = draws2.mu.shape
    _write_matrix(os.path.join(out_dir, f"part2_weights_chain{c}.txt"), draws2.weights, prov)
    _write_matrix(os.path.join(out_dir, f"part2_mu_chain{c}.txt"),
                  draws2.mu.reshape(S, L * k), prov)
    _write_matrix(os.path.join(out_dir, f"part2_Sigma_chain{c}.txt"),
                  draws2.Sigma.reshape(S, L * k * k), prov)
    scalars2 = np.column_stack([
        draws2.alpha2, draws2.k0, draws2.n_occupied.astype(float),
        draws2.m1, draws2.Psi1.reshape(S, k * k)])
    _write_matrix(os.path.join(out_dir, f"part2_scalars_chain{c}.txt"), scalars2, prov)

    names = sorted(traces)
    rows = np.column_stack([traces[n] for n in names])
    with open(os.path.join(out_dir, f"traces_chain{c}.txt"), "w") as fh:
        fh.write(prov)
        fh.write(_DELIM.join(["draw"] + names) + "\n")
        for i, row in enumerate(rows):
            fh.write(_DELIM.join([str(i)] + [_float_str(v) for v in row]) + "\n")


def load_run(run_dir):
    """Rebuild pooled draws (both parts) and the config text from a run directory."""
    from .config import config_from_text
    with open(os.path.join(run_dir, "config_echo.txt")) as fh:
        config = config_from_text(fh.read())
    draws1_all = None
    draws2_all = None
    c = 0
    while os.path.exists(os.path.join(run_dir, f"part1_beta1_chain{c}.txt")):
        beta1 = _read_matrix(os.path.join(run_dir, f"part1_beta1_chain{c}.txt"))
        V = _read_matrix(os.path.join(run_dir, f"part1_V_chain{c}.txt"))
        if V.size == 0:
            V = np.empty((beta1.shape[0], 0))
        scal = _read_matrix(os.path.join(run_dir, f"part1_scalars_chain{c}.txt"))
        d1 = p1.Part1Draws(beta1=beta1, alpha1=scal[:, 0], V=V,
                           n_clusters=scal[:, 1].astype(np.int64), n=V.shape[1])
        weights = _read_matrix(os.path.join(run_dir, f"part2_weights_chain{c}.txt"))
        S, L = weights.shape
        k = config.part2.k
        mu = _read_matrix(os.path.join(run_dir, f"part2_mu_chain{c}.txt")).reshape(S, L, k)
        Sigma = _read_matrix(os.path.join(run_dir, f"part2_Sigma_chain{c}.txt")).reshape(S, L, k, k)
        s2 = _read_matrix(os.path.join(run_dir, f"part2_scalars_chain{c}.txt"))
        d2 = p2.Part2Draws(
            weights=weights, mu=mu, Sigma=Sigma,
            alpha2=s2[:, 0], k0=s2[:, 1], n_occupied=s2[:, 2].astype(np.int64),
            m1=s2[:, 3:3 + k], Psi1=s2[:, 3 + k:].reshape(S, k, k))
        draws1_all = d1 if draws1_all is None else draws1_all.concat(d1)
        draws2_all = d2 if draws2_all is None else draws2_all.concat(d2)
        c += 1
    if draws1_all is None:
        raise SamplerError(f"no stored chains found in {run_dir}")
    return config, draws1_all, draws2_all


def run_predict(run_dir, dataset, out_dir, z_grid=None, grid_points=121,
                cutoff=0.5, reference_figures=False):
    """Predictive surfaces, area tables, and truth comparison for new units."""
    config, draws1, draws2 = load_run(run_dir)
    os.makedirs(out_dir, exist_ok=True)
    prov = _provenance(config)
    if dataset.W.shape[1] != draws1.beta1.shape[1]:
        raise SamplerError("occurrence covariate dimension mismatch with the fitted model")
    if dataset.X.shape[1] != draws2.k - 1:
        raise SamplerError("intensity covariate dimension mismatch with the fitted model")

    p_mean, p_lo, p_hi = p1.expected_delta_many(draws1, dataset.W)
    surfaces = []
    unit_rows = []
    surface_rows = []
    for i in range(dataset.n):
        if z_grid is None:
            grid = p2.predictive_grid(draws2, dataset.X[i], n_points=grid_points)
            if config.log_z:
                grid = np.exp(grid)
        else:
            grid = np.asarray(z_grid, dtype=float)
        surf = pred.combine(draws1, draws2, (dataset.X[i], dataset.W[i]), grid,
                            unit_id=dataset.ids[i], log_z=config.log_z)
        surfaces.append(surf)
        unit_rows.append([str(dataset.ids[i]), _float_str(surf.p_positive),
                          _float_str(surf.point_prediction)])
        for j, zv in enumerate(surf.z_grid):
            surface_rows.append([str(dataset.ids[i]), _float_str(zv),
                                 _float_str(surf.density_mean[j]),
                                 _float_str(surf.density_lo[j]),
                                 _float_str(surf.density_hi[j])])
    _write_table(os.path.join(out_dir, "units.txt"),
                 ["id", "p_positive", "point_prediction"], unit_rows, prov)
    _write_table(os.path.join(out_dir, "surfaces.txt"),
                 ["id", "z", "density_mean", "density_lo", "density_hi"],
                 surface_rows, prov)

    # truth comparison (held-out design): prediction dataset carries true y
    _write_table(
        os.path.join(out_dir, "comparison.txt"),
        ["id", "true_y", "predicted_y", "p_positive"],
        [[str(dataset.ids[i]), _float_str(dataset.y[i]),
          _float_str(surfaces[i].point_prediction), _float_str(p_mean[i])]
         for i in range(dataset.n)], prov)
    summary = pred.classify(p_mean, dataset.delta, cutoff=cutoff)
    _write_table(
        os.path.join(out_dir, "classification.txt"),
        ["true_zero_correct", "true_zero_wrong", "true_positive_correct",
         "true_positive_wrong", "accuracy", "cutoff"],
        [[_float_str(summary.true_zero_correct), _float_str(summary.true_zero_wrong),
          _float_str(summary.true_positive_correct), _float_str(summary.true_positive_wrong),
          _float_str(summary.accuracy), _float_str(summary.cutoff)]], prov)

    if dataset.area is not None:
        area_map = {str(dataset.ids[i]): str(dataset.area[i]) for i in range(dataset.n)}
        ins = dataset.insample if dataset.insample is not None else np.zeros(dataset.n, dtype=bool)
        observed = {str(dataset.ids[i]): dataset.y[i] for i in range(dataset.n) if ins[i]}
        predicted = {str(dataset.ids[i]): surfaces[i].point_prediction
                     for i in range(dataset.n) if not ins[i]}
        tables = pred.area_plugin(area_map, observed, predicted)
        _write_table(
            os.path.join(out_dir, "area_estimates.txt"),
            ["area", "total", "mean", "n_units"],
            [[a, _float_str(t["total"]), _float_str(t["mean"]), str(t["n_units"])]
             for a, t in tables.items()], prov)

    if reference_figures:
        _emit_reference_figures(out_dir, dataset, draws1, surfaces, prov)
    return surfaces, summary


def _emit_reference_figures(out_dir, dataset, draws1, surfaces, prov):
    """Plain-table analogues of the usual report figures (plotting external)."""
    # histogram counts of y
    counts, edges = np.histogram(dataset.y, bins=30)
    _write_table(os.path.join(out_dir, "fig1_histogram.txt"),
                 ["bin_lo", "bin_hi", "count"],
                 [[_float_str(edges[i]), _float_str(edges[i + 1]), str(int(counts[i]))]
                  for i in range(counts.size)], prov)
    # estimated link curve with bands vs the logistic baseline
    from .distributions import logistic_cdf
    grid = np.linspace(-6, 6, 121)
    mean, lo, hi = p1.estimated_link(draws1, grid)
    _write_table(os.path.join(out_dir, "fig2_link.txt"),
                 ["t", "link_mean", "link_lo", "link_hi", "logistic"],
                 [[_float_str(t), _float_str(mean[i]), _float_str(lo[i]),
                   _float_str(hi[i]), _float_str(logistic_cdf(t))]
                  for i, t in enumerate(grid)], prov)
    # fitted-mean curve: x (first intensity covariate) vs point prediction
    order = np.argsort(dataset.X[:, 0])
    _write_table(os.path.join(out_dir, "fig4_fitted_mean.txt"),
                 ["x", "true_y", "predicted_y"],
                 [[_float_str(dataset.X[i, 0]), _float_str(dataset.y[i]),
                   _float_str(surfaces[i].point_prediction)] for i in order], prov)
