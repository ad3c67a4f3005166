"""Hyperparameters, MCMC schedule and run options.

A config is built once (defaults from a dataset summary, optionally
overridden from a flat text file), validated once, and then treated as
immutable by every chain.
"""

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ConfigError",
    "Part1Hyper",
    "Part2Hyper",
    "McmcSchedule",
    "RunConfig",
    "DatasetSummary",
    "default_config",
    "validate",
    "validate_or_raise",
    "config_to_text",
    "config_from_text",
]


class ConfigError(ValueError):
    """Raised for invalid configurations; carries the full violation list."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class Part1Hyper:
    """Priors and proposal tuning for the binary (occurrence) part."""

    a1_0: float
    b1_0: float
    beta1_0: np.ndarray
    S_beta1_0: np.ndarray
    mh_step_scale: float = 0.1
    adapt_mh: bool = True
    # random-walk MH kernel applications per Gibbs sweep
    mh_refreshes: int = 1

    def __post_init__(self):
        self.beta1_0 = np.atleast_1d(np.asarray(self.beta1_0, dtype=float))
        self.S_beta1_0 = np.atleast_2d(np.asarray(self.S_beta1_0, dtype=float))

    @property
    def r(self):
        return self.beta1_0.size


@dataclass
class Part2Hyper:
    """Priors and truncation level for the intensity (density) part."""

    a2_0: float
    b2_0: float
    nu1: float
    nu2: float
    m2: np.ndarray
    S2: np.ndarray
    tau1: float
    tau2: float
    Psi2: np.ndarray
    truncation_L: int = 50

    def __post_init__(self):
        self.m2 = np.atleast_1d(np.asarray(self.m2, dtype=float))
        self.S2 = np.atleast_2d(np.asarray(self.S2, dtype=float))
        self.Psi2 = np.atleast_2d(np.asarray(self.Psi2, dtype=float))

    @property
    def k(self):
        return self.m2.size


@dataclass
class McmcSchedule:
    burn_in: int = 5000
    keep: int = 1000
    thin: int = 5
    chains: int = 2
    seed: int = 20130815


@dataclass
class RunConfig:
    part1: Part1Hyper
    part2: Part2Hyper
    schedule: McmcSchedule = field(default_factory=McmcSchedule)
    # alternative reading of the ambiguous Psi2 default (see default_config)
    psi2_equals_half_s: bool = False
    # fit the intensity part on log(z) instead of raw z
    log_z: bool = False


@dataclass
class DatasetSummary:
    """Per-column means and sample covariance of (z, x) over positive-response
    units, plus the occurrence-covariate count r."""

    mean_d: np.ndarray
    cov_d: np.ndarray
    r: int
    column_names: tuple = ()

    def __post_init__(self):
        self.mean_d = np.atleast_1d(np.asarray(self.mean_d, dtype=float))
        self.cov_d = np.atleast_2d(np.asarray(self.cov_d, dtype=float))
        if not self.column_names:
            self.column_names = tuple(
                ["z"] + [f"x{i}" for i in range(self.mean_d.size - 1)]
            )


def _spd_errors(name, a, k=None):
    errs = []
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return [f"{name} must be square"]
    if k is not None and a.shape[0] != k:
        errs.append(f"{name} must be {k}x{k}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-8 * max(1.0, np.abs(a).max())):
        errs.append(f"{name} must be symmetric")
    else:
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            errs.append(f"{name} must be positive definite (Cholesky failed)")
    return errs


def default_config(summary, truncation_L=50, mh_step_scale=0.1,
                   psi2_equals_half_s=False, schedule=None):
    """Documented defaults, with m2/S2/Psi2 computed from the dataset summary.

    S2 = 0.5 * S and Psi2 = (0.5 * S)^-1 where S is the sample covariance of
    (z, x) over positive-response units; `psi2_equals_half_s` switches to the
    alternative reading Psi2 = 0.5 * S.
    """
    S = np.atleast_2d(np.asarray(summary.cov_d, dtype=float))
    k = S.shape[0]
    half_S = 0.5 * S
    try:
        np.linalg.cholesky(half_S)
    except np.linalg.LinAlgError:
        variances = np.diag(S)
        bad = [summary.column_names[i] for i in range(k)
               if variances[i] <= 1e-12 * max(1.0, variances.max())]
        detail = (f"zero-variance columns: {', '.join(bad)}" if bad
                  else "columns are collinear")
        raise ConfigError(
            f"sample covariance of (z, x) is singular ({detail})"
        )
    if psi2_equals_half_s:
        Psi2 = half_S.copy()
    else:
        Psi2 = np.linalg.inv(half_S)
        Psi2 = 0.5 * (Psi2 + Psi2.T)
    r = int(summary.r)
    part1 = Part1Hyper(
        a1_0=2.0,
        b1_0=1.0,
        beta1_0=np.zeros(r),
        S_beta1_0=np.eye(r) * 10000.0,
        mh_step_scale=float(mh_step_scale),
    )
    part2 = Part2Hyper(
        a2_0=10.0,
        b2_0=1.0,
        nu1=4.0,
        nu2=4.0,
        m2=np.asarray(summary.mean_d, dtype=float).copy(),
        S2=half_S.copy(),
        tau1=6.01,
        tau2=3.01,
        Psi2=Psi2,
        truncation_L=int(truncation_L),
    )
    return RunConfig(
        part1=part1,
        part2=part2,
        schedule=schedule or McmcSchedule(),
        psi2_equals_half_s=bool(psi2_equals_half_s),
    )


def validate(config):
    """Check every invariant; return the full list of violations (empty = valid)."""
    errs = []
    p1 = config.part1
    if not p1.a1_0 > 0:
        errs.append("a1_0 must be > 0")
    if not p1.b1_0 > 0:
        errs.append("b1_0 must be > 0")
    if not p1.mh_step_scale > 0:
        errs.append("mh_step_scale must be > 0")
    if p1.mh_refreshes < 1:
        errs.append("mh_refreshes must be >= 1")
    r = p1.r
    errs += _spd_errors("S_beta1_0", p1.S_beta1_0, r)

    p2 = config.part2
    k = p2.k
    if not p2.a2_0 > 0:
        errs.append("a2_0 must be > 0")
    if not p2.b2_0 > 0:
        errs.append("b2_0 must be > 0")
    if not p2.nu1 > k - 1:
        errs.append(f"nu1 must exceed k-1 = {k - 1}")
    if not p2.nu2 > k - 1:
        errs.append(f"nu2 must exceed k-1 = {k - 1}")
    if not p2.tau1 > 0:
        errs.append("tau1 must be > 0")
    if not p2.tau2 > 0:
        errs.append("tau2 must be > 0")
    if p2.truncation_L < 2:
        errs.append("truncation_L must be >= 2")
    errs += _spd_errors("S2", p2.S2, k)
    errs += _spd_errors("Psi2", p2.Psi2, k)

    s = config.schedule
    if s.burn_in < 0:
        errs.append("burn_in must be >= 0")
    if s.keep < 1:
        errs.append("keep must be >= 1")
    if s.thin < 1:
        errs.append("thin must be >= 1")
    if s.chains < 1:
        errs.append("chains must be >= 1")
    if not 0 <= s.seed < 2 ** 64:
        errs.append("seed must be a 64-bit unsigned integer")
    return errs


def validate_or_raise(config):
    errs = validate(config)
    if errs:
        raise ConfigError(errs)
    return config


# -- flat key/value text format ----------------------------------------------
#
# Scalars: `key = value`, vectors: whitespace-separated values, matrices:
# one `key.row<i>` line per row. Floats use repr() so a write/read round-trip
# is bit-exact.

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _emit(lines, key, value):
    value = np.asarray(value)
    if value.ndim == 0:
        lines.append(f"{key} = {_fmt(value.item())}")
    elif value.ndim == 1:
        lines.append(f"{key} = " + " ".join(_fmt(v) for v in value))
    else:
        for i, row in enumerate(value):
            lines.append(f"{key}.row{i} = " + " ".join(_fmt(v) for v in row))


_SCALAR_FIELDS = {
    "part1": ["a1_0", "b1_0", "mh_step_scale", "adapt_mh", "mh_refreshes"],
    "part2": ["a2_0", "b2_0", "nu1", "nu2", "tau1", "tau2", "truncation_L"],
    "schedule": ["burn_in", "keep", "thin", "chains", "seed"],
    "": ["psi2_equals_half_s", "log_z"],
}
_VECTOR_FIELDS = {"part1": ["beta1_0"], "part2": ["m2"]}
_MATRIX_FIELDS = {"part1": ["S_beta1_0"], "part2": ["S2", "Psi2"]}
_INT_FIELDS = {"mh_refreshes", "truncation_L", "burn_in", "keep", "thin", "chains", "seed"}
_BOOL_FIELDS = {"adapt_mh", "psi2_equals_half_s", "log_z"}


def config_to_text(config):
    lines = []
    for section in ("part1", "part2", "schedule"):
        obj = getattr(config, section)
        for name in _SCALAR_FIELDS[section]:
            _emit(lines, f"{section}.{name}", getattr(obj, name))
        for name in _VECTOR_FIELDS.get(section, []):
            _emit(lines, f"{section}.{name}", getattr(obj, name))
        for name in _MATRIX_FIELDS.get(section, []):
            _emit(lines, f"{section}.{name}", getattr(obj, name))
    for name in _SCALAR_FIELDS[""]:
        _emit(lines, name, getattr(config, name))
    return "\n".join(lines) + "\n"


def _parse_scalar(name, token):
    if name in _BOOL_FIELDS:
        if token not in ("true", "false"):
            raise ConfigError(f"{name}: expected true/false, got {token!r}")
        return token == "true"
    if name in _INT_FIELDS:
        return int(token)
    return float(token)


def config_from_text(text):
    """Parse the flat key/value format back into a RunConfig."""
    values = {}
    rows = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: missing '='")
        key, _, rhs = line.partition("=")
        key = key.strip()
        tokens = rhs.split()
        if ".row" in key:
            base, _, idx = key.rpartition(".row")
            rows.setdefault(base, {})[int(idx)] = [float(t) for t in tokens]
        else:
            values[key] = tokens
    for base, rowmap in rows.items():
        mat = [rowmap[i] for i in sorted(rowmap)]
        values[base] = np.array(mat, dtype=float)

    def scalar(section, name):
        key = f"{section}.{name}" if section else name
        if key not in values:
            raise ConfigError(f"missing config key {key}")
        tok = values.pop(key)
        if len(tok) != 1:
            raise ConfigError(f"{key}: expected a single value")
        return _parse_scalar(name, tok[0])

    def vector(section, name):
        key = f"{section}.{name}"
        if key not in values:
            raise ConfigError(f"missing config key {key}")
        return np.array([float(t) for t in values.pop(key)])

    def matrix(section, name):
        key = f"{section}.{name}"
        if key not in values:
            raise ConfigError(f"missing config key {key}")
        v = values.pop(key)
        if not isinstance(v, np.ndarray):
            raise ConfigError(f"{key}: expected matrix rows")
        return v

    part1 = Part1Hyper(
        a1_0=scalar("part1", "a1_0"),
        b1_0=scalar("part1", "b1_0"),
        beta1_0=vector("part1", "beta1_0"),
        S_beta1_0=matrix("part1", "S_beta1_0"),
        mh_step_scale=scalar("part1", "mh_step_scale"),
        adapt_mh=scalar("part1", "adapt_mh"),
        mh_refreshes=scalar("part1", "mh_refreshes"),
    )
    part2 = Part2Hyper(
        a2_0=scalar("part2", "a2_0"),
        b2_0=scalar("part2", "b2_0"),
        nu1=scalar("part2", "nu1"),
        nu2=scalar("part2", "nu2"),
        m2=vector("part2", "m2"),
        S2=matrix("part2", "S2"),
        tau1=scalar("part2", "tau1"),
        tau2=scalar("part2", "tau2"),
        Psi2=matrix("part2", "Psi2"),
        truncation_L=scalar("part2", "truncation_L"),
    )
    schedule = McmcSchedule(
        burn_in=scalar("schedule", "burn_in"),
        keep=scalar("schedule", "keep"),
        thin=scalar("schedule", "thin"),
        chains=scalar("schedule", "chains"),
        seed=scalar("schedule", "seed"),
    )
    cfg = RunConfig(
        part1=part1,
        part2=part2,
        schedule=schedule,
        psi2_equals_half_s=scalar("", "psi2_equals_half_s"),
        log_z=scalar("", "log_z"),
    )
    if values:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(values))}")
    return cfg


def with_overrides(config, **kwargs):
    """Convenience for tests/CLI: replace schedule or flag fields."""
    return replace(config, **kwargs)
