"""Monte-Carlo experiment harness: plans, trials, RMSE tables."""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import baselines
from .errors import MapDoaError, PlanError
from .misdp import BnBConfig, RoundingConfig, solve_map
from .model import (
    ArrayGeometry,
    Scenario,
    SteeringDictionary,
    derive_seed,
    generate_snapshots,
    make_rng,
    snr_to_noise_variance,
    uniform_grid,
)
from .objective import SelectionProblem

AXES = ("snr_db", "snapshots")
METHOD_KINDS = ("map-rounding", "map-bnb", "dml", "sparrow", "music", "root-music")
REFINEMENTS = ("none", "dml", "map")
COLUMNS = ("method", "axis", "axis_value", "rmse", "mean_time_s", "mean_gap", "n_trials", "n_failures")
WORKERS_ENV = "MAPDOA_WORKERS"

PLAN_SCHEMA = """\
Plan file (JSON object):
  scenario    scenario object (see the scenario schema); its swept field is overridden
  sensors     optional ULA size (default 8) or "positions": [...]
  grid_size   number of grid points K (default 100)
  axis        "snr_db" or "snapshots"
  values      nonempty list of sweep values
  methods     list of {"name": str (optional, unique), "kind": one of
              map-rounding | map-bnb | dml | sparrow | music | root-music,
              "params": {...}, "refine": none | dml | map (optional)}
  trials      Monte-Carlo trials per sweep value (default 1000, or 200 with dml and L=5)
  refinement  none | dml | map, applied to grid-based methods (default none)
  seed        master seed (default 0)
  output      optional CSV path
"""


def wraparound_distance(a, b):
    """Circular distance ``min_k |a - b + 2 k pi|``, in ``[0, pi]``."""
    d = np.abs(np.mod(np.asarray(a, float) - np.asarray(b, float) + np.pi, 2 * np.pi) - np.pi)
    return float(d) if np.ndim(d) == 0 else d


def matched_errors(estimate, truth) -> np.ndarray:
    """Per-source wrap-around errors after minimum-cost matching.

    Missing estimates cost ``pi`` each; surplus estimates are ignored.
    """
    truth = np.atleast_1d(np.asarray(truth, float))
    est = np.atleast_1d(np.asarray(estimate, float))
    err = np.full(truth.size, np.pi)
    if est.size == 0:
        return err
    cost = wraparound_distance(truth[:, None], est[None, :]) ** 2
    rows, cols = linear_sum_assignment(cost)
    err[rows] = np.sqrt(cost[rows, cols])
    return err


def rmse(estimates, truth) -> float:
    """Root of the mean squared matched error over trials and sources."""
    errs = [matched_errors(e, truth) for e in estimates]
    if not errs:
        return float("nan")
    return float(np.sqrt(np.mean(np.concatenate(errs) ** 2)))


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    refine: str | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "params": dict(self.params)}
        if self.refine is not None:
            d["refine"] = self.refine
        return d

    @classmethod
    def from_dict(cls, d) -> "MethodSpec":
        if isinstance(d, str):
            d = {"kind": d}
        kind = d.get("kind")
        if kind not in METHOD_KINDS:
            raise PlanError(f"unknown method kind {kind!r}")
        refine = d.get("refine")
        if refine is not None and refine not in REFINEMENTS:
            raise PlanError(f"unknown refinement {refine!r}")
        return cls(d.get("name", kind), kind, dict(d.get("params", {})), refine)


@dataclass
class ExperimentPlan:
    scenario: Scenario
    axis: str
    values: list
    methods: list
    trials: int | None = None
    refinement: str = "none"
    seed: int = 0
    grid_size: int = 100
    geometry: ArrayGeometry = field(default_factory=lambda: ArrayGeometry.ula(8))
    output: str | None = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise PlanError(f"axis must be one of {AXES}")
        if len(self.values) == 0:
            raise PlanError("sweep values must be nonempty")
        if self.axis == "snapshots" and any(int(v) != v or v < 1 for v in self.values):
            raise PlanError("snapshot counts must be positive integers")
        if self.refinement not in REFINEMENTS:
            raise PlanError(f"refinement must be one of {REFINEMENTS}")
        self.methods = [m if isinstance(m, MethodSpec) else MethodSpec.from_dict(m) for m in self.methods]
        if not self.methods:
            raise PlanError("need at least one method")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise PlanError("method names must be unique")
        if self.trials is None:
            heavy = self.scenario.L >= 5 and any(m.kind == "dml" for m in self.methods)
            self.trials = 200 if heavy else 1000
        if self.trials < 1:
            raise PlanError("trials must be at least 1")
        if self.grid_size < 2:
            raise PlanError("grid_size must be at least 2")

    def to_dict(self) -> dict:
        d = {
            "scenario": self.scenario.to_dict(),
            "axis": self.axis,
            "values": list(self.values),
            "methods": [m.to_dict() for m in self.methods],
            "trials": self.trials,
            "refinement": self.refinement,
            "seed": self.seed,
            "grid_size": self.grid_size,
        }
        d.update(self.geometry.to_dict())
        if self.output is not None:
            d["output"] = self.output
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        if not isinstance(d, dict):
            raise PlanError("plan must be a JSON object")
        try:
            sc = dict(d["scenario"])
            # the swept field may be left out of the template
            if d.get("axis") == "snr_db" and not ({"snr_db", "noise_variance"} & sc.keys()):
                sc["snr_db"] = float(d["values"][0])
            if d.get("axis") == "snapshots" and "snapshots" not in sc:
                sc["snapshots"] = int(d["values"][0])
            scenario = Scenario.from_dict(sc)
            geometry = (
                ArrayGeometry.from_dict(d) if ("sensors" in d or "positions" in d) else ArrayGeometry.ula(8)
            )
            return cls(
                scenario,
                d["axis"],
                list(d["values"]),
                list(d["methods"]),
                trials=d.get("trials"),
                refinement=d.get("refinement", "none"),
                seed=int(d.get("seed", 0)),
                grid_size=int(d.get("grid_size", 100)),
                geometry=geometry,
                output=d.get("output"),
            )
        except KeyError as exc:
            raise PlanError(f"plan is missing {exc}") from None
        except (TypeError, ValueError) as exc:
            raise PlanError(f"bad plan: {exc}") from None

    def scenario_at(self, value) -> Scenario:
        if self.axis == "snr_db":
            return replace(self.scenario, noise_variance=snr_to_noise_variance(float(value)))
        return replace(self.scenario, snapshots=int(value))


def load_plan(path) -> ExperimentPlan:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise PlanError(f"plan is not valid JSON: {exc}") from None
    return ExperimentPlan.from_dict(d)


@dataclass
class ResultRow:
    method: str
    axis: str
    axis_value: float
    rmse: float
    mean_time_s: float
    mean_gap: float
    n_trials: int
    n_failures: int


@dataclass
class ResultTable:
    """Aggregated rows plus the raw per-trial errors they came from.

    ``errors[(method, sweep_index)]`` holds one row of matched per-source
    errors per trial (NaN for failed trials); it is not written to CSV.
    """

    rows: list
    plan: dict | None = None
    errors: dict = field(default_factory=dict, repr=False)

    def row(self, method: str, axis_value) -> ResultRow:
        for r in self.rows:
            if r.method == method and r.axis_value == axis_value:
                return r
        raise KeyError((method, axis_value))

    def series(self, method: str, column: str = "rmse") -> tuple[np.ndarray, np.ndarray]:
        rows = [r for r in self.rows if r.method == method]
        return np.array([r.axis_value for r in rows]), np.array([getattr(r, column) for r in rows])

    @property
    def methods(self) -> list:
        return list(dict.fromkeys(r.method for r in self.rows))

    def to_csv(self) -> str:
        buf = io.StringIO()
        if self.plan is not None:
            buf.write("# plan: " + json.dumps(self.plan, sort_keys=True) + "\n")
        buf.write("# units: rmse in radians of spatial frequency; mean_time_s in seconds\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([
                r.method, r.axis, _fmt(r.axis_value), _fmt(r.rmse), _fmt(r.mean_time_s),
                _fmt(r.mean_gap), r.n_trials, r.n_failures,
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        plan = None
        body = []
        for line in text.splitlines():
            if line.startswith("# plan: "):
                plan = json.loads(line[len("# plan: "):])
            elif not line.startswith("#") and line.strip():
                body.append(line)
        reader = csv.reader(body)
        header = next(reader, None)
        if header is None or tuple(header) != COLUMNS:
            raise ValueError(f"unexpected result columns {header}")
        rows = [
            ResultRow(m, a, float(v), float(e), float(t), float(g), int(n), int(f))
            for m, a, v, e, t, g, n, f in reader
        ]
        return cls(rows, plan)

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        return cls.from_csv(Path(path).read_text())

    def equal_except_time(self, other: "ResultTable") -> bool:
        def key(t):
            return [(r.method, r.axis, r.axis_value, r.rmse, r.mean_gap, r.n_trials, r.n_failures)
                    for r in t.rows]
        return _nan_equal(key(self), key(other))


def _nan_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    for x, y in zip(a, b):
        for p, q in zip(x, y):
            if p != q and not (isinstance(p, float) and isinstance(q, float) and np.isnan(p) and np.isnan(q)):
                return False
    return True


def _fmt(x) -> str:
    return repr(float(x))


def default_samples(L: int) -> int:
    return 10_000 if L <= 3 else 100_000


def _grid_method(kind: str) -> bool:
    return kind != "root-music"


def run_method(spec: MethodSpec, data, scenario: Scenario, dictionary: SteeringDictionary,
               geometry: ArrayGeometry, seed: int, refinement: str = "none"):
    """One estimator on one snapshot set: ``(frequencies, gap or nan)``."""
    L = scenario.L
    p = spec.params
    rho = scenario.noise_variance / float(np.mean(scenario.variances))
    gap = float("nan")
    if spec.kind in ("map-rounding", "map-bnb"):
        problem = SelectionProblem.from_scenario(dictionary, data, scenario)
        rounding = RoundingConfig(
            samples=int(p.get("samples", default_samples(L))),
            variant=p.get("variant", "projected"),
            delta=float(p.get("delta", 0.1)),
            seed=seed,
        )
        if spec.kind == "map-rounding":
            freqs, report = solve_map(problem, rounding)
        else:
            config = BnBConfig(
                gap_tol=float(p.get("gap_tol", 1e-6)),
                node_limit=p.get("node_limit", 500),
                time_limit=p.get("time_limit"),
                rounding=rounding,
                relax_max_iter=int(p.get("relax_max_iter", 2000)),
                relax_tol=float(p.get("relax_tol", 1e-7)),
            )
            freqs, report = solve_map(problem, config)
        gap = report.gap
    elif spec.kind == "dml":
        freqs = baselines.brute_force_dml(data, dictionary, L, limit=int(p.get("limit", baselines.ENUMERATION_LIMIT)))
    elif spec.kind == "sparrow":
        lam = float(p.get("lam", baselines.sparrow_lambda(scenario.noise_variance, geometry.M)))
        state = baselines.sparrow_solve(
            data, dictionary, lam, L, tol=float(p.get("tol", 1e-8)), iter_cap=int(p.get("iter_cap", 1000))
        )
        freqs = state.frequencies
    elif spec.kind == "music":
        freqs = baselines.music(data, dictionary, L)
    else:
        freqs = baselines.root_music(data, geometry, L)

    kind = spec.refine if spec.refine is not None else refinement
    if kind != "none" and _grid_method(spec.kind) and len(freqs):
        freqs = baselines.gridless_refine(
            freqs, data, geometry, kind, rho=rho if kind == "map" else None, cell=dictionary.spacing
        )
    return np.asarray(freqs, float), gap


_FAILURES = (MapDoaError, np.linalg.LinAlgError, ArithmeticError, ValueError)


def run_trial(plan: ExperimentPlan, sweep_index: int, trial_index: int,
              dictionary: SteeringDictionary | None = None):
    """All methods on one ``(sweep value, trial)`` cell sharing one snapshot set.

    Returns ``{method name: (errors or None, seconds, gap)}``.
    """
    if dictionary is None:
        dictionary = SteeringDictionary.build(plan.geometry, uniform_grid(plan.grid_size))
    scenario = plan.scenario_at(plan.values[sweep_index])
    data, _ = generate_snapshots(scenario, plan.geometry, make_rng((plan.seed, sweep_index, trial_index)))
    # one rounding seed per cell, so both MAP solvers see the same draws
    seed = derive_seed(plan.seed, sweep_index, trial_index)
    out = {}
    for spec in plan.methods:
        t0 = time.perf_counter()
        try:
            freqs, gap = run_method(spec, data, scenario, dictionary, plan.geometry, seed, plan.refinement)
            errs = matched_errors(freqs, scenario.frequencies)
        except _FAILURES:
            errs, gap = None, float("nan")
        out[spec.name] = (errs, time.perf_counter() - t0, gap)
    return out


_WORKER_PLAN = None
_WORKER_DICT = None


def _init_worker(plan_dict):
    global _WORKER_PLAN, _WORKER_DICT
    _WORKER_PLAN = ExperimentPlan.from_dict(plan_dict)
    _WORKER_DICT = SteeringDictionary.build(_WORKER_PLAN.geometry, uniform_grid(_WORKER_PLAN.grid_size))


def _worker_trial(cell):
    return cell, run_trial(_WORKER_PLAN, cell[0], cell[1], _WORKER_DICT)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_experiment(plan: ExperimentPlan, workers: int | None = None, progress=None) -> ResultTable:
    """Run every method on every ``(sweep value, trial)`` cell and aggregate.

    Each cell's data come from the seed ``(plan.seed, sweep index, trial index)``
    so results do not depend on execution order or worker count. Failed
    trials are counted and left out of the RMSE.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    cells = [(i, t) for i in range(len(plan.values)) for t in range(plan.trials)]
    results = {}
    if workers == 1:
        dictionary = SteeringDictionary.build(plan.geometry, uniform_grid(plan.grid_size))
        for cell in cells:
            results[cell] = run_trial(plan, cell[0], cell[1], dictionary)
            if progress is not None:
                progress(cell)
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(plan.to_dict(),)) as ex:
            for cell, res in ex.map(_worker_trial, cells, chunksize=max(1, len(cells) // (8 * workers))):
                results[cell] = res
                if progress is not None:
                    progress(cell)

    L = plan.scenario.L
    rows, errors = [], {}
    for spec in plan.methods:
        for i, value in enumerate(plan.values):
            per = [results[(i, t)][spec.name] for t in range(plan.trials)]
            errs = np.array([e if e is not None else np.full(L, np.nan) for e, _, _ in per])
            ok = ~np.isnan(errs).any(axis=1)
            times = np.array([s for _, s, _ in per])
            gaps = np.array([g for _, _, g in per])
            gaps = gaps[ok & ~np.isnan(gaps)]
            rows.append(ResultRow(
                spec.name,
                plan.axis,
                float(value),
                float(np.sqrt(np.mean(errs[ok] ** 2))) if ok.any() else float("nan"),
                float(times.mean()),
                float(gaps.mean()) if gaps.size else float("nan"),
                int(plan.trials),
                int((~ok).sum()),
            ))
            errors[(spec.name, i)] = errs
    table = ResultTable(rows, plan.to_dict(), errors)
    if plan.output:
        table.write_csv(plan.output)
    return table


def aggregate(table: ResultTable, column: str = "rmse") -> tuple[list, list, np.ndarray]:
    """Wide ``axis_value x method`` array of one column, plot-ready."""
    methods = table.methods
    values = sorted(dict.fromkeys(r.axis_value for r in table.rows))
    out = np.full((len(values), len(methods)), np.nan)
    for r in table.rows:
        out[values.index(r.axis_value), methods.index(r.method)] = getattr(r, column)
    return values, methods, out


def write_aggregate(table: ResultTable, column: str, path) -> None:
    values, methods, arr = aggregate(table, column)
    axis = table.rows[0].axis if table.rows else "axis_value"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([axis, *methods])
    for v, row in zip(values, arr):
        w.writerow([_fmt(v), *(_fmt(x) for x in row)])
    Path(path).write_text(buf.getvalue())
