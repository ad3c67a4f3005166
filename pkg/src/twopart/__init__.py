"""Semiparametric Bayesian two-part model for semicontinuous data.

Occurrence part: binary regression with a Dirichlet-process link centered
at the standard logistic. Intensity part: DP mixture of multivariate
Normals inducing a weight-dependent conditional density regression. The
two parts combine into a semicontinuous predictive distribution used for
classification and small-area plug-in estimation.
"""

from . import (config, dataio, diagnostics, distributions, part1, part2,
               predictive, runner)

__version__ = "0.1.0"

__all__ = [
    "config",
    "dataio",
    "diagnostics",
    "distributions",
    "part1",
    "part2",
    "predictive",
    "runner",
]
