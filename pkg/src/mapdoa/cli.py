"""Command line: simulate, estimate, bench, report.

Exit status is 0 on success, 2 on usage errors (bad flags or malformed
scenario/plan files, with the relevant schema printed) and 1 on runtime
errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, bench
from .errors import MapDoaError, PlanError
from .misdp import BnBConfig, RoundingConfig, solve_map
from .model import (
    SCENARIO_SCHEMA,
    ArrayGeometry,
    Scenario,
    SteeringDictionary,
    generate_snapshots,
    load_scenario,
    make_rng,
    preprocess,
    read_matrix_csv,
    uniform_grid,
    write_matrix_csv,
)
from .objective import SelectionProblem


class UsageError(Exception):
    def __init__(self, message, schema=""):
        super().__init__(message)
        self.schema = schema


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}", self.format_usage())


def _geometry(args) -> ArrayGeometry:
    if args.positions:
        return ArrayGeometry(np.asarray(args.positions, dtype=float))
    return ArrayGeometry.ula(args.sensors)


def cmd_simulate(args) -> int:
    if args.scenario:
        try:
            scenario, geometry = load_scenario(args.scenario)
        except (PlanError, json.JSONDecodeError, ValueError) as exc:
            raise UsageError(f"bad scenario file: {exc}", SCENARIO_SCHEMA) from None
    else:
        if args.freqs_over_pi is None or (args.snr_db is None and args.noise_variance is None):
            raise UsageError("need --scenario or --freqs-over-pi with --snr-db/--noise-variance",
                             SCENARIO_SCHEMA)
        d = {
            "frequencies_over_pi": list(args.freqs_over_pi),
            "snapshots": args.snapshots,
            "seed": args.seed if args.seed is not None else 0,
        }
        if args.noise_variance is not None:
            d["noise_variance"] = args.noise_variance
        else:
            d["snr_db"] = args.snr_db
        if args.correlation is not None:
            d["correlation"] = args.correlation
        try:
            scenario = Scenario.from_dict(d)
        except PlanError as exc:
            raise UsageError(str(exc), SCENARIO_SCHEMA) from None
        geometry = _geometry(args)
    if args.seed is not None:
        scenario.seed = args.seed
    data, psi = generate_snapshots(scenario, geometry, make_rng(scenario.seed))
    write_matrix_csv(args.out, data.Y)
    if args.truth_out:
        write_matrix_csv(args.truth_out, psi)
    print(f"wrote {data.M}x{data.N} snapshots to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    Y = read_matrix_csv(args.data)
    data = preprocess(Y)
    geometry = _geometry(args)
    if geometry.M != data.M:
        raise UsageError(f"data has {data.M} sensors but the geometry has {geometry.M}")
    dictionary = SteeringDictionary.build(geometry, uniform_grid(args.grid_size))
    report = None
    m = args.method
    if m in ("map-rounding", "map-bnb"):
        if args.rho is None:
            raise UsageError(f"--rho is required for {m}")
        problem = SelectionProblem(dictionary, data, args.L, args.rho)
        rounding = RoundingConfig(samples=args.samples, variant=args.variant, seed=args.seed)
        if m == "map-rounding":
            freqs, report = solve_map(problem, rounding)
        else:
            config = BnBConfig(gap_tol=args.gap_tol, node_limit=args.node_limit,
                               time_limit=args.time_limit, rounding=rounding)
            freqs, report = solve_map(problem, config)
    elif m == "dml":
        freqs = baselines.brute_force_dml(data, dictionary, args.L)
    elif m == "sparrow":
        lam = args.lam
        if lam is None:
            if args.noise_variance is None:
                raise UsageError("sparrow needs --lam or --noise-variance")
            lam = baselines.sparrow_lambda(args.noise_variance, geometry.M)
        state = baselines.sparrow_solve(data, dictionary, lam, args.L)
        freqs = state.frequencies
        if state.short:
            print(f"warning: only {len(freqs)} peaks found", file=sys.stderr)
    elif m == "music":
        freqs = baselines.music(data, dictionary, args.L)
    else:
        freqs = baselines.root_music(data, geometry, args.L)
    if args.refine != "none" and m != "root-music":
        if args.refine == "map" and args.rho is None:
            raise UsageError("--refine map needs --rho")
        freqs = baselines.gridless_refine(freqs, data, geometry, args.refine, rho=args.rho,
                                          cell=dictionary.spacing)
    print("frequencies=" + " ".join(repr(float(f)) for f in freqs))
    if report is not None:
        sys.stdout.write(report.to_record())
        if args.record:
            Path(args.record).write_text(report.to_record())
    return 0


def cmd_bench(args) -> int:
    try:
        plan = bench.load_plan(args.plan)
    except (PlanError, OSError) as exc:
        raise UsageError(f"bad plan: {exc}", bench.PLAN_SCHEMA) from None
    if args.trials is not None:
        plan.trials = args.trials
    out = args.out or plan.output
    if out is None:
        raise UsageError("no output path (--out or plan 'output')", bench.PLAN_SCHEMA)
    plan.output = None
    table = bench.run_experiment(plan, workers=args.workers)
    table.write_csv(out)
    print(f"wrote {len(table.rows)} rows to {out}")
    return 0


def cmd_report(args) -> int:
    try:
        table = bench.ResultTable.read_csv(args.results)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad result table: {exc}") from None
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for column in ("rmse", "mean_time_s", "mean_gap"):
        path = outdir / f"{column}.csv"
        bench.write_aggregate(table, column, path)
        print(path)
        if args.plot:
            from .plotting import plot_column

            print(plot_column(table, column, outdir / f"{column}.png"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mapdoa", description="MAP joint-sparse DOA estimation")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def geometry_flags(q):
        q.add_argument("--sensors", type=int, default=8, help="ULA size (default 8)")
        q.add_argument("--positions", type=float, nargs="+", help="sensor positions in half wavelengths")

    s = sub.add_parser("simulate", help="draw a snapshot matrix")
    s.add_argument("--scenario", help="scenario JSON file")
    s.add_argument("--freqs-over-pi", type=float, nargs="+", help="source frequencies divided by pi")
    s.add_argument("--snr-db", type=float)
    s.add_argument("--noise-variance", type=float)
    s.add_argument("--snapshots", type=int, default=8)
    s.add_argument("--correlation", type=float, help="real correlation phi (3 sources)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="snapshot CSV")
    s.add_argument("--truth-out", help="optional CSV for the source waveforms")
    geometry_flags(s)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run one estimator on a snapshot CSV")
    e.add_argument("--method", required=True, choices=bench.METHOD_KINDS)
    e.add_argument("--data", required=True)
    e.add_argument("--L", type=int, required=True)
    e.add_argument("--rho", type=float, help="sigma^2 / gamma for the MAP solvers")
    e.add_argument("--grid-size", type=int, default=100)
    e.add_argument("--samples", type=int, default=10_000)
    e.add_argument("--variant", default="projected", choices=("basic", "scaled", "projected"))
    e.add_argument("--gap-tol", type=float, default=1e-6)
    e.add_argument("--node-limit", type=int, default=500)
    e.add_argument("--time-limit", type=float, default=600.0)
    e.add_argument("--lam", type=float)
    e.add_argument("--noise-variance", type=float)
    e.add_argument("--refine", default="none", choices=bench.REFINEMENTS)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--record", help="write the solve report to this file")
    geometry_flags(e)
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bench", help="run an experiment plan")
    b.add_argument("--plan", required=True)
    b.add_argument("--out")
    b.add_argument("--trials", type=int, help="override the plan's trial count")
    b.add_argument("--workers", type=int, help=f"worker processes (default ${bench.WORKERS_ENV} or 1)")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="aggregate a result CSV into plot-ready tables")
    r.add_argument("--results", required=True)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--plot", action="store_true", help="also render PNG figures")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required", parser.format_help())
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.schema:
            print(exc.schema, file=sys.stderr)
        return 2
    except (MapDoaError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
