"""Command-line interface: simulate / fit / predict / diagnose.

Exit codes: 0 success, 2 validation error, 3 sampler hard error.
"""

import argparse
import os
import sys

import numpy as np

from . import dataio, runner
from .config import (ConfigError, McmcSchedule, config_from_text,
                     config_to_text, default_config, validate_or_raise)
from .dataio import DataError


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="twopart",
        description="Semiparametric Bayesian two-part model for semicontinuous data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset with truth sidecar")
    sim.add_argument("--out", required=True, help="output dataset path")
    sim.add_argument("--n", type=int, default=800)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--occurrence-coefs", default="0.5,4.0,-3.0",
                     help="comma-separated, intercept first")
    sim.add_argument("--link", choices=["logistic", "skewed-mixture"], default="logistic")

    fit = sub.add_parser("fit", help="run both samplers and store draws")
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True, help="run directory")
    fit.add_argument("--config", help="config file (defaults computed from the data)")
    fit.add_argument("--seed", type=int, help="override the schedule seed")
    fit.add_argument("--burn", type=int, help="override burn-in")
    fit.add_argument("--keep", type=int, help="override stored draws")
    fit.add_argument("--thin", type=int, help="override thinning")
    fit.add_argument("--chains", type=int, help="override chain count")
    fit.add_argument("--split", type=float,
                     help="fit on this seeded fraction; holdout written to the run dir")

    prd = sub.add_parser("predict", help="predictive surfaces from a run directory")
    prd.add_argument("--run", required=True, help="run directory from fit")
    prd.add_argument("--data", required=True, help="prediction dataset")
    prd.add_argument("--out", required=True)
    prd.add_argument("--grid", help="z grid as lo:hi:points")
    prd.add_argument("--cutoff", type=float, default=0.5)
    prd.add_argument("--reference-figure", action="store_true")

    dia = sub.add_parser("diagnose", help="print the PSRF report and posterior table")
    dia.add_argument("--run", required=True)
    return parser


def _schedule_overrides(args, schedule):
    for src, dst in (("burn", "burn_in"), ("keep", "keep"), ("thin", "thin"),
                     ("chains", "chains"), ("seed", "seed")):
        val = getattr(args, src, None)
        if val is not None:
            setattr(schedule, dst, val)
    return schedule


def _cmd_simulate(args):
    coefs = np.array([float(t) for t in args.occurrence_coefs.split(",")])
    spec = dataio.GeneratorSpec(
        n=args.n,
        occurrence_coefs=coefs,
        experts=[
            dataio.Expert(weight=0.5, x_center=[-1.5], x_scale=0.8,
                          intercept=5.0, slope=[0.8], noise_scale=0.5),
            dataio.Expert(weight=0.5, x_center=[2.5], x_scale=0.8,
                          intercept=1.0, slope=[2.0], noise_scale=0.5),
        ],
        seed=args.seed,
        occurrence_link=args.link,
    )
    dataset, sidecar = dataio.simulate(spec)
    dataio.write_dataset(dataset, args.out)
    dataio.write_sidecar(sidecar, dataset.ids, args.out + ".truth")
    print(dataset.summary_line())
    return 0


def _cmd_fit(args):
    dataset = dataio.load_dataset(args.data)
    print(dataset.summary_line())
    if args.split is not None:
        seed = args.seed if args.seed is not None else 0
        fit_set, holdout, _ = runner.split_dataset(dataset, args.split, seed)
        os.makedirs(args.out, exist_ok=True)
        dataio.write_dataset(holdout, os.path.join(args.out, "holdout.txt"))
        dataset = fit_set
        print(f"split: fitting on {dataset.n} units, "
              f"{holdout.n} held out (see holdout.txt)")
    if args.config:
        with open(args.config) as fh:
            config = config_from_text(fh.read())
    else:
        config = default_config(dataio.summarize(dataset))
    _schedule_overrides(args, config.schedule)
    validate_or_raise(config)
    runner.run_fit(config, dataset, args.out)
    print(f"run written to {args.out}")
    return 0


def _cmd_predict(args):
    dataset = dataio.load_dataset(args.data)
    z_grid = None
    grid_points = 121
    if args.grid:
        lo, hi, pts = args.grid.split(":")
        z_grid = np.linspace(float(lo), float(hi), int(pts))
    _, summary = runner.run_predict(
        args.run, dataset, args.out, z_grid=z_grid, grid_points=grid_points,
        cutoff=args.cutoff, reference_figures=args.reference_figure)
    print(f"accuracy at cutoff {summary.cutoff}: {summary.accuracy:.3f}")
    print(f"predictions written to {args.out}")
    return 0


def _cmd_diagnose(args):
    for name in ("psrf_report.txt", "posterior_table.txt"):
        path = os.path.join(args.run, name)
        if os.path.exists(path):
            with open(path) as fh:
                sys.stdout.write(fh.read())
        else:
            print(f"({name} not present in {args.run})")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    handlers = {"simulate": _cmd_simulate, "fit": _cmd_fit,
                "predict": _cmd_predict, "diagnose": _cmd_diagnose}
    try:
        return handlers[args.command](args)
    except (ConfigError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except runner.SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
