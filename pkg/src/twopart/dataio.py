"""Dataset ingestion, writing, and the synthetic generator.

All files are delimited text with a single header line. The response is
decomposed as delta = I(y > 0) and z = y on the positive units.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import DatasetSummary
from .distributions import logistic_cdf

__all__ = [
    "DataError",
    "SemicontinuousDataset",
    "GeneratorSpec",
    "Expert",
    "load_dataset",
    "write_dataset",
    "simulate",
    "summarize",
]

_DELIM = "\t"


class DataError(ValueError):
    pass


@dataclass
class SemicontinuousDataset:
    ids: np.ndarray
    y: np.ndarray
    W: np.ndarray
    X: np.ndarray
    area: np.ndarray = None
    insample: np.ndarray = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids)
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if np.any(~np.isfinite(self.y)):
            raise DataError("y contains non-finite values")
        if np.any(self.y < 0):
            bad = int(np.argmax(self.y < 0))
            raise DataError(f"negative response y at row {bad}")
        for name, arr in (("W", self.W), ("X", self.X)):
            if arr.shape[0] != self.n:
                raise DataError(f"{name} row count does not match y")
            if np.any(~np.isfinite(arr)):
                raise DataError(f"{name} contains non-finite values")
        if self.area is not None:
            self.area = np.asarray(self.area)
        if self.insample is not None:
            self.insample = np.asarray(self.insample, dtype=bool)

    @property
    def n(self):
        return self.y.size

    @property
    def delta(self):
        return (self.y > 0).astype(np.int64)

    @property
    def z(self):
        return self.y[self.y > 0]

    @property
    def m(self):
        return int(np.count_nonzero(self.y > 0))

    def positive_joint(self, log_z=False):
        """Rows (z_j, x_j') over positive-response units."""
        mask = self.y > 0
        z = self.y[mask]
        if log_z:
            z = np.log(z)
        return np.column_stack([z, self.X[mask]])

    def subset(self, mask):
        return SemicontinuousDataset(
            ids=self.ids[mask], y=self.y[mask], W=self.W[mask], X=self.X[mask],
            area=None if self.area is None else self.area[mask],
            insample=None if self.insample is None else self.insample[mask],
        )

    def summary_line(self):
        return (f"n={self.n} units, {self.n - self.m} with zero response, "
                f"{self.m} with positive response")


def summarize(dataset, log_z=False):
    """DatasetSummary of (z, x) over positive-response units, for defaults."""
    D = dataset.positive_joint(log_z=log_z)
    if D.shape[0] < 2:
        raise DataError("need at least 2 positive-response units for the sample covariance")
    names = tuple(["z"] + [f"x{i}" for i in range(dataset.X.shape[1])])
    return DatasetSummary(
        mean_d=D.mean(axis=0),
        cov_d=np.cov(D, rowvar=False, ddof=1),
        r=dataset.W.shape[1],
        column_names=names,
    )


# -- file format ----------------------------------------------------------------

def _float_str(x):
    return repr(float(x))


def write_dataset(dataset, path):
    """Write the dataset as tab-delimited text, full float precision."""
    r = dataset.W.shape[1]
    p = dataset.X.shape[1]
    cols = ["id", "y"] + [f"w{j}" for j in range(r)] + [f"x{j}" for j in range(p)]
    if dataset.area is not None:
        cols.append("area")
    if dataset.insample is not None:
        cols.append("insample")
    with open(path, "w") as fh:
        fh.write(_DELIM.join(cols) + "\n")
        for i in range(dataset.n):
            row = [str(dataset.ids[i]), _float_str(dataset.y[i])]
            row += [_float_str(v) for v in dataset.W[i]]
            row += [_float_str(v) for v in dataset.X[i]]
            if dataset.area is not None:
                row.append(str(dataset.area[i]))
            if dataset.insample is not None:
                row.append("1" if dataset.insample[i] else "0")
            fh.write(_DELIM.join(row) + "\n")


def load_dataset(path, w_columns=None, x_columns=None, y_column="y",
                 id_column="id", area_column="area", insample_column="insample"):
    """Read a delimited dataset; columns resolved by header name.

    w_columns / x_columns default to every header starting with 'w' / 'x'.
    """
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if len(lines) < 2:
        raise DataError("no data rows")
    header = lines[0].split(_DELIM) if _DELIM in lines[0] else lines[0].split(",")
    delim = _DELIM if _DELIM in lines[0] else ","
    idx = {name: i for i, name in enumerate(header)}
    if y_column not in idx:
        raise DataError(f"missing response column {y_column!r}")
    if w_columns is None:
        w_columns = [h for h in header if h.startswith("w") and h != y_column]
    if x_columns is None:
        x_columns = [h for h in header if h.startswith("x")]
    for c in list(w_columns) + list(x_columns):
        if c not in idx:
            raise DataError(f"declared column {c!r} not in header")
    if not w_columns or not x_columns:
        raise DataError("need at least one w column and one x column")

    n = len(lines) - 1
    ids = []
    y = np.empty(n)
    W = np.empty((n, len(w_columns)))
    X = np.empty((n, len(x_columns)))
    has_area = area_column in idx
    has_ins = insample_column in idx
    area = [] if has_area else None
    insample = np.empty(n, dtype=bool) if has_ins else None

    def cell(fields, col, rownum):
        j = idx[col]
        if j >= len(fields) or fields[j] == "":
            raise DataError(f"missing value at row {rownum}, column {col!r}")
        return fields[j]

    for rownum, line in enumerate(lines[1:], 1):
        fields = line.split(delim)
        ids.append(cell(fields, id_column, rownum) if id_column in idx else str(rownum))
        try:
            y[rownum - 1] = float(cell(fields, y_column, rownum))
            for j, c in enumerate(w_columns):
                W[rownum - 1, j] = float(cell(fields, c, rownum))
            for j, c in enumerate(x_columns):
                X[rownum - 1, j] = float(cell(fields, c, rownum))
        except ValueError as exc:
            raise DataError(f"non-numeric field at row {rownum}: {exc}")
        if has_area:
            area.append(cell(fields, area_column, rownum))
        if has_ins:
            insample[rownum - 1] = cell(fields, insample_column, rownum) not in ("0", "false", "False")
    return SemicontinuousDataset(
        ids=np.array(ids), y=y, W=W, X=X,
        area=np.array(area) if has_area else None,
        insample=insample,
    )


# -- synthetic generator ----------------------------------------------------------

@dataclass
class Expert:
    """One intensity-truth expert: an x-region with a linear-Gaussian response."""

    weight: float
    x_center: np.ndarray
    x_scale: float
    intercept: float
    slope: np.ndarray
    noise_scale: float

    def __post_init__(self):
        self.x_center = np.atleast_1d(np.asarray(self.x_center, dtype=float))
        self.slope = np.atleast_1d(np.asarray(self.slope, dtype=float))
        if self.weight <= 0:
            raise DataError("expert weights must be positive")


@dataclass
class GeneratorSpec:
    """Mixture-of-experts ground truth substituting the unavailable survey data."""

    n: int
    occurrence_coefs: np.ndarray
    experts: list
    seed: int = 0
    occurrence_link: str = "logistic"   # or "skewed-mixture"
    w_sd: float = 1.0

    def __post_init__(self):
        self.occurrence_coefs = np.atleast_1d(np.asarray(self.occurrence_coefs, dtype=float))
        if self.occurrence_link not in ("logistic", "skewed-mixture"):
            raise DataError(f"unknown occurrence link {self.occurrence_link!r}")


def _true_link(spec, index):
    if spec.occurrence_link == "logistic":
        return logistic_cdf(index)
    # mildly asymmetric mixture-of-logistics link
    return 0.6 * logistic_cdf(index) + 0.4 * logistic_cdf(2.0 * (index - 1.0))


def true_occurrence_prob(spec, W):
    return _true_link(spec, W @ spec.occurrence_coefs)


def true_conditional_mean(spec, x):
    """E(z | x) under the generating mixture of experts."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    wts = np.array([e.weight for e in spec.experts], dtype=float)
    wts = wts / wts.sum()
    num = 0.0
    den = 0.0
    for wt, e in zip(wts, spec.experts):
        dev = (x - e.x_center) / e.x_scale
        dens = wt * np.exp(-0.5 * dev @ dev) / (np.sqrt(2.0 * np.pi) * e.x_scale) ** x.size
        num += dens * (e.intercept + e.slope @ x)
        den += dens
    return float(num / den) if den > 0 else np.nan


def true_conditional_density(spec, z, x):
    """f(z | x) under the generating mixture of experts."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.asarray(z, dtype=float)
    wts = np.array([e.weight for e in spec.experts], dtype=float)
    wts = wts / wts.sum()
    marg = np.zeros(len(spec.experts))
    for i, (wt, e) in enumerate(zip(wts, spec.experts)):
        dev = (x - e.x_center) / e.x_scale
        marg[i] = wt * np.exp(-0.5 * dev @ dev) / (np.sqrt(2.0 * np.pi) * e.x_scale) ** x.size
    if marg.sum() <= 0:
        return np.zeros_like(z)
    wx = marg / marg.sum()
    dens = np.zeros_like(z, dtype=float)
    for i, e in enumerate(spec.experts):
        mean = e.intercept + e.slope @ x
        dens += wx[i] * np.exp(-0.5 * ((z - mean) / e.noise_scale) ** 2) / (
            np.sqrt(2.0 * np.pi) * e.noise_scale)
    return dens


def simulate(spec):
    """Draw a synthetic dataset plus a ground-truth sidecar.

    The sidecar records, per unit, the true occurrence probability and the
    true conditional mean of z given the drawn x; it is the oracle for
    recovery tests and never feeds the fit.
    """
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(99,)))
    n = spec.n
    r = spec.occurrence_coefs.size
    W = np.column_stack([np.ones(n), rng.normal(0.0, spec.w_sd, size=(n, r - 1))])
    p_true = true_occurrence_prob(spec, W)
    delta = (rng.random(n) < p_true).astype(np.int64)

    wts = np.array([e.weight for e in spec.experts], dtype=float)
    wts = wts / wts.sum()
    which = rng.choice(len(spec.experts), size=n, p=wts)
    p = spec.experts[0].x_center.size
    X = np.empty((n, p))
    y = np.zeros(n)
    for i in range(n):
        e = spec.experts[which[i]]
        X[i] = e.x_center + e.x_scale * rng.standard_normal(p)
        if delta[i] == 1:
            zi = e.intercept + e.slope @ X[i] + e.noise_scale * rng.standard_normal()
            # keep the response on the positive half-line
            y[i] = abs(zi) if zi <= 0 else zi
            if y[i] == 0.0:
                y[i] = 1e-6
    ids = np.array([f"u{i:06d}" for i in range(n)])
    dataset = SemicontinuousDataset(ids=ids, y=y, W=W, X=X)
    sidecar = {
        "p_true": p_true,
        "mean_true": np.array([true_conditional_mean(spec, X[i]) for i in range(n)]),
        "delta_true": delta,
        "expert": which,
    }
    return dataset, sidecar


def write_sidecar(sidecar, ids, path):
    with open(path, "w") as fh:
        fh.write(_DELIM.join(["id", "p_true", "mean_true", "delta_true", "expert"]) + "\n")
        for i in range(len(ids)):
            fh.write(_DELIM.join([
                str(ids[i]),
                _float_str(sidecar["p_true"][i]),
                _float_str(sidecar["mean_true"][i]),
                str(int(sidecar["delta_true"][i])),
                str(int(sidecar["expert"][i])),
            ]) + "\n")
