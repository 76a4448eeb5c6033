"""Command-line interface: ``ateavg {simulate,estimate,montecarlo,analyze-many}``.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from .averaging import average_available, trimmed_average, wald_interval
from .dataset import load_csv, write_csv
from .estimators import EstimatorSettings, Method, estimate_many
from .exceptions import AteError
from .harness import (
    AVERAGED,
    TRIMMED,
    agreement_from_table,
    analyze_datasets,
    estimator_correlations,
    run_monte_carlo,
    summarize,
    write_estimates_csv,
)
from .simulation import ScenarioId, generate_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _methods(text):
    try:
        return Method.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _level(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("level must lie in (0, 1)")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _settings(args):
    return EstimatorSettings(
        cv_folds=args.cv_folds,
        dml_folds=args.dml_folds,
        propensity_clip=args.clip,
        screen_cap=args.screen_cap,
        seed=args.est_seed,
    )


def build_parser():
    p = _Parser(prog="ateavg", description="Averaged treatment effect estimators for high-dimensional confounding.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--threads", type=_positive, default=1, help="worker processes (never changes results)")
    est = _Parser(add_help=False)
    est.add_argument("--methods", type=_methods, default=list(Method), help="comma separated method names or 'all'")
    est.add_argument("--level", type=_level, default=0.95)
    est.add_argument("--cv-folds", type=_positive, default=10)
    est.add_argument("--dml-folds", type=_positive, default=5)
    est.add_argument("--clip", type=float, default=0.025, help="propensity clipping level")
    est.add_argument("--screen-cap", type=_positive, default=None)
    est.add_argument("--est-seed", type=int, default=0, help="seed for cross-validation folds")

    s = sub.add_parser("simulate", parents=[common], help="write simulated datasets")
    s.add_argument("--scenario", type=ScenarioId, choices=list(ScenarioId), required=True)
    s.add_argument("--reps", type=_positive, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True, help="output directory")

    e = sub.add_parser("estimate", parents=[common, est], help="estimate the ATE on one CSV dataset")
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--trim", action="store_true", help="also report the trimmed average")
    e.add_argument("--out", type=Path, default=None, help="report CSV (default: stdout)")

    m = sub.add_parser("montecarlo", parents=[common, est], help="Monte Carlo study of one scenario")
    m.add_argument("--scenario", type=ScenarioId, choices=list(ScenarioId), required=True)
    m.add_argument("--reps", type=_positive, default=200)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", type=Path, required=True)
    m.add_argument("--raw-out", type=Path, default=None, help="also write per-replication results")

    a = sub.add_parser("analyze-many", parents=[common, est], help="decision agreement and correlations")
    a.add_argument("--data-dir", type=Path, required=True)
    a.add_argument("--pn-threshold", type=float, default=0.25)
    a.add_argument("--out", type=str, required=True, help="output path prefix")
    return p


def _cmd_simulate(args):
    args.out.mkdir(parents=True, exist_ok=True)
    for r in range(args.reps):
        draw = generate_scenario(args.scenario, args.seed, r)
        stem = args.out / f"{draw.scenario.value}_seed{args.seed}_rep{r:04d}"
        write_csv(draw.dataset, stem.with_suffix(".csv"))
        stem.with_suffix(".meta").write_text(
            f"scenario={draw.scenario.value}\nseed={args.seed}\nreplication={r}\ntrue_ate={draw.true_ate!r}\n"
        )
    return EXIT_OK


def _fmt(v):
    return repr(float(v))


def _cmd_estimate(args):
    d = load_csv(args.data)
    outputs, failures = estimate_many(d, args.methods, _settings(args))
    lines = ["estimator,theta,sigma,lo,hi,reject_null,status"]
    by_method = {o.method: o for o in outputs}
    for m in args.methods:
        if m in by_method:
            o = by_method[m]
            lo, hi = wald_interval(o.theta_hat, o.sigma_hat, args.level)
            lines.append(f"{m.value},{_fmt(o.theta_hat)},{_fmt(o.sigma_hat)},{_fmt(lo)},{_fmt(hi)},"
                         f"{str(not lo <= 0 <= hi).lower()},ok")
        else:
            lines.append(f"{m.value},nan,nan,nan,nan,,failed: {failures[m]!r}")
    ensembles = [(AVERAGED, lambda: average_available(outputs, tuple(failures), level=args.level))]
    if args.trim:
        ensembles.append((TRIMMED, lambda: trimmed_average(outputs, level=args.level, excluded=tuple(failures))))
    for label, fn in ensembles:
        try:
            a = fn()
            lines.append(f"{label},{_fmt(a.theta_A)},{_fmt(a.sigma_A)},{_fmt(a.interval[0])},{_fmt(a.interval[1])},"
                         f"{str(a.reject_null).lower()},ok")
        except ValueError as exc:
            lines.append(f"{label},nan,nan,nan,nan,,failed: {str(exc)!r}")
    text = "\n".join(lines) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)
    return EXIT_OK


def _cmd_montecarlo(args):
    if args.reps < 2:
        print("ateavg: montecarlo needs --reps >= 2 to summarize", file=sys.stderr)
        return EXIT_USAGE
    raw = run_monte_carlo(args.scenario, args.reps, _settings(args), args.methods, args.seed, args.threads,
                          args.level)
    summarize(raw).to_csv(args.out)
    if args.raw_out is not None:
        with open(args.raw_out, "w") as fh:
            fh.write("replication,estimator,theta,sigma,lo,hi,covers,failed\n")
            for r in raw.rows:
                fh.write(f"{r.replication},{r.estimator},{_fmt(r.theta)},{_fmt(r.sigma)},{_fmt(r.lo)},{_fmt(r.hi)},"
                         f"{str(r.covers).lower()},{str(r.failed).lower()}\n")
    return EXIT_OK


def _cmd_analyze(args):
    files = sorted(args.data_dir.glob("*.csv"))
    if not files:
        raise AteError(f"no CSV files in {args.data_dir}")
    datasets = [load_csv(f) for f in files]
    table = analyze_datasets(datasets, _settings(args), args.methods, [f.stem for f in files], args.threads,
                             args.level)
    prefix = args.out
    write_estimates_csv(table, f"{prefix}_estimates.csv")
    agreement = agreement_from_table(table)
    agreement.to_csv(f"{prefix}_agreement.csv")
    agreement.filtered().to_csv(f"{prefix}_agreement_filtered.csv")
    for suffix, threshold in (("", None), ("_filtered", args.pn_threshold)):
        try:
            estimator_correlations(table, threshold, args.methods).to_csv(f"{prefix}_correlation{suffix}.csv")
        except ValueError as exc:
            print(f"ateavg: skipping correlation{suffix}: {exc}", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "montecarlo": _cmd_montecarlo,
    "analyze-many": _cmd_analyze,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if hasattr(args, "clip") and not 0 < args.clip < 0.5:
            parser.error("--clip must lie in (0, 0.5)")
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (AteError, ValueError, OSError) as exc:
        print(f"ateavg: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
