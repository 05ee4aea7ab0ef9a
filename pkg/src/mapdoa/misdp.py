"""Randomized rounding and branch-and-bound for the support-selection program.

The semidefinite slack of the mixed-integer formulation is eliminated in
closed form, so every node relaxation is the matrix-fractional interval
relaxation solved in :mod:`mapdoa.relax`.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .model import make_rng
from .objective import SelectionProblem, support_objective, support_objectives
from .relax import CERTIFICATE_TOL, FractionalSolution, solve_interval_relaxation

VARIANTS = ("basic", "scaled", "projected")
_DRAW_CHUNK = 20_000


@dataclass(frozen=True)
class RoundingConfig:
    samples: int = 10_000
    variant: str = "projected"
    delta: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("need at least one rounding sample")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "scaled" and not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class BnBConfig:
    gap_tol: float = 1e-6
    node_limit: int | None = None
    time_limit: float | None = None
    rounding: RoundingConfig = field(default_factory=RoundingConfig)
    relax_max_iter: int = 2000
    relax_tol: float = 1e-7

    def __post_init__(self):
        if self.gap_tol < 0:
            raise ValueError("gap_tol must be nonnegative")


@dataclass
class SolveReport:
    """Incumbent support with its certificate.

    ``gap = (objective - lower_bound) / max(|objective|, 1e-12)``.
    """

    support: np.ndarray
    objective: float
    lower_bound: float
    gap: float
    nodes_explored: int
    wall_time: float
    status: str
    root_value: float = float("nan")
    incumbent_trace: list = field(default_factory=list, repr=False)

    FIELDS = ("support", "objective", "lower_bound", "gap", "nodes_explored",
              "wall_time", "status", "root_value")

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.support)

    def to_record(self) -> str:
        """One ``key=value`` line per field; floats keep full precision."""
        lines = []
        for name in self.FIELDS:
            value = getattr(self, name)
            if name == "support":
                value = " ".join(str(i) for i in self.indices) + f" /{self.support.size}"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{name}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_record(cls, text: str) -> "SolveReport":
        kv = dict(line.split("=", 1) for line in text.strip().splitlines() if "=" in line)
        idx, size = kv["support"].split("/")
        support = np.zeros(int(size), bool)
        support[[int(i) for i in idx.split()]] = True
        return cls(
            support,
            float(kv["objective"]),
            float(kv["lower_bound"]),
            float(kv["gap"]),
            int(kv["nodes_explored"]),
            float(kv["wall_time"]),
            kv["status"],
            float(kv.get("root_value", "nan")),
        )

    def csv_row(self) -> dict:
        return {
            "support": " ".join(str(i) for i in self.indices),
            "objective": repr(self.objective),
            "lower_bound": repr(self.lower_bound),
            "gap": repr(self.gap),
            "nodes_explored": str(self.nodes_explored),
            "wall_time": repr(self.wall_time),
            "status": self.status,
        }


def relative_gap(objective: float, lower_bound: float) -> float:
    return max(objective - lower_bound, 0.0) / max(abs(objective), 1e-12)


def top_l_support(u_hat: np.ndarray, L: int, fixed_one=None) -> np.ndarray:
    """Keep the ``L`` largest fractional entries (fixed ones always kept)."""
    u_hat = np.asarray(u_hat, dtype=float)
    out = np.zeros(u_hat.size, bool)
    score = u_hat.copy()
    if fixed_one is not None:
        out[fixed_one] = True
        score[fixed_one] = -np.inf
    rest = L - int(out.sum())
    if rest > 0:
        order = np.argsort(-score, kind="stable")
        pick = [k for k in order[:rest] if score[k] > 0.0]
        out[pick] = True
    return out


def _evaluate_supports(problem: SelectionProblem, masks: np.ndarray) -> np.ndarray:
    """Objective of each row of a boolean ``(n, K)`` array, grouped by cardinality."""
    values = np.empty(masks.shape[0])
    card = masks.sum(axis=1)
    for s in np.unique(card):
        rows = np.flatnonzero(card == s)
        if s == 0:
            values[rows] = problem.energy
            continue
        idx = np.nonzero(masks[rows])[1].reshape(rows.size, s)
        values[rows] = support_objectives(problem, idx)
    return values


def _repair(draws: np.ndarray, u_hat: np.ndarray, L: int) -> np.ndarray:
    """Project infeasible draws by keeping their ``L`` ones with the largest ``u_hat``."""
    order = np.argsort(-u_hat, kind="stable")
    ranked = draws[:, order]
    keep = ranked & (np.cumsum(ranked, axis=1) <= L)
    out = np.empty_like(draws)
    out[:, order] = keep
    return out


def rounding_draws(u_hat: np.ndarray, L: int, config: RoundingConfig):
    """Yield chunks of feasible boolean candidates, ``config.samples`` draws in total.

    ``basic`` discards draws with more than L ones, ``scaled`` draws with
    probabilities ``(1 - delta) u_hat`` and discards, and ``projected`` keeps
    the L ones of an oversized draw that carry the largest ``u_hat``.
    """
    u_hat = np.clip(np.asarray(u_hat, dtype=float), 0.0, 1.0)
    p = (1.0 - config.delta) * u_hat if config.variant == "scaled" else u_hat
    rng = make_rng(config.seed)
    remaining = config.samples
    while remaining > 0:
        n = min(remaining, _DRAW_CHUNK)
        remaining -= n
        draws = rng.random((n, u_hat.size)) < p
        over = draws.sum(axis=1) > L
        if config.variant == "projected":
            if over.any():
                draws[over] = _repair(draws[over], u_hat, L)
        else:
            draws = draws[~over]
        yield draws


def randomized_rounding(
    problem: SelectionProblem,
    fractional: FractionalSolution | np.ndarray,
    config: RoundingConfig,
) -> tuple[np.ndarray, float]:
    """Best feasible binary support among Bernoulli draws around ``u_hat``.

    Each distinct support from :func:`rounding_draws` is evaluated once with
    the small Gram form. If no draw is feasible the top-L binarization of
    ``u_hat`` is returned.
    """
    u_hat = fractional.u if isinstance(fractional, FractionalSolution) else np.asarray(fractional)
    u_hat = np.clip(np.asarray(u_hat, dtype=float), 0.0, 1.0)
    L = problem.budget

    best_val, best = np.inf, None
    seen: set[bytes] = set()
    for draws in rounding_draws(u_hat, L, config):
        if draws.shape[0] == 0:
            continue
        packed = np.packbits(draws, axis=1)
        _, first = np.unique(packed, axis=0, return_index=True)
        first.sort()
        fresh = [i for i in first if packed[i].tobytes() not in seen]
        if not fresh:
            continue
        seen.update(packed[i].tobytes() for i in fresh)
        cand = draws[fresh]
        vals = _evaluate_supports(problem, cand)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best = float(vals[j]), cand[j].copy()

    if best is None:
        best = top_l_support(u_hat, L)
        best_val = support_objective(problem, best)
    return best, best_val


@dataclass(order=True)
class _Node:
    bound: float
    neg_depth: int
    order: int
    fixed_zero: np.ndarray = field(compare=False)
    fixed_one: np.ndarray = field(compare=False)
    warm: np.ndarray | None = field(compare=False, default=None)


def branch_and_bound(problem: SelectionProblem, config: BnBConfig | None = None) -> SolveReport:
    """Exact solve of the support-selection program by best-first branch-and-bound.

    Node bounds are Frank-Wolfe certificates of the interval relaxation on
    the node's face, so they stay valid even for inexact relaxation solves.
    The incumbent starts from randomized rounding at the root and is updated
    with the top-L binarization of every node relaxation.
    """
    config = config or BnBConfig()
    start = time.perf_counter()
    K, L = problem.K, problem.budget
    tol = config.gap_tol
    counter = itertools.count()

    def threshold(inc):
        return inc - tol * max(abs(inc), 1e-12)

    root = solve_interval_relaxation(problem, max_iter=max(config.relax_max_iter, 5000))
    inc_support, inc_val = randomized_rounding(problem, root, config.rounding)
    cand = top_l_support(root.u, L)
    cand_val = support_objective(problem, cand)
    if cand_val < inc_val:
        inc_support, inc_val = cand, cand_val
    trace = [inc_val]
    nodes = 1
    pruned_lb = np.inf

    heap: list[_Node] = []
    zeros = np.zeros(K, bool)

    def process(sol: FractionalSolution, fz, fo, depth):
        """Update incumbent from a solved node, then fathom or branch."""
        nonlocal inc_support, inc_val, pruned_lb
        cand = top_l_support(sol.u, L, fixed_one=fo)
        cand_val = support_objective(problem, cand)
        if cand_val < inc_val:
            inc_support, inc_val = cand, cand_val
            trace.append(inc_val)
        lb = sol.lower_bound
        if lb >= threshold(inc_val) or cand_val - lb <= tol * max(abs(cand_val), 1e-12):
            pruned_lb = min(pruned_lb, lb)
            return
        free = ~(fz | fo)
        if not free.any():  # pragma: no cover - forced faces are solved exactly
            return
        frac = np.where(free, np.abs(sol.u - 0.5), np.inf)
        k = int(np.argmin(frac))
        for value in (1, 0):
            cz, co = fz.copy(), fo.copy()
            (co if value else cz)[k] = True
            if co.sum() > L:
                continue
            heapq.heappush(heap, _Node(lb, -(depth + 1), next(counter), cz, co, sol.u))

    process(root, zeros, zeros, 0)
    status = "optimal"
    while heap:
        node = heap[0]
        if node.bound >= threshold(inc_val):
            pruned_lb = min(pruned_lb, min(n.bound for n in heap))
            heap.clear()
            break
        if config.node_limit is not None and nodes >= config.node_limit:
            status = "limit_reached"
            break
        if config.time_limit is not None and time.perf_counter() - start >= config.time_limit:
            status = "limit_reached"
            break
        heapq.heappop(heap)
        nodes += 1
        warm = node.warm.copy()
        warm[node.fixed_zero] = 0.0
        warm[node.fixed_one] = 1.0
        sol = solve_interval_relaxation(
            problem,
            u0=warm,
            fixed_zero=node.fixed_zero,
            fixed_one=node.fixed_one,
            max_iter=config.relax_max_iter,
            tol=config.relax_tol,
            gap_tol=max(CERTIFICATE_TOL, config.relax_tol),
            cutoff=threshold(inc_val),
        )
        sol.lower_bound = max(sol.lower_bound, node.bound)
        process(sol, node.fixed_zero, node.fixed_one, -node.neg_depth)

    open_lb = min((n.bound for n in heap), default=np.inf)
    lower = min(inc_val, open_lb, pruned_lb)
    return SolveReport(
        support=inc_support,
        objective=inc_val,
        lower_bound=lower,
        gap=relative_gap(inc_val, lower),
        nodes_explored=nodes,
        wall_time=time.perf_counter() - start,
        status=status,
        root_value=root.value,
        incumbent_trace=trace,
    )


def rounding_report(problem: SelectionProblem, config: RoundingConfig) -> SolveReport:
    """Run relaxation plus randomized rounding and certify with the relaxation bound."""
    start = time.perf_counter()
    root = solve_interval_relaxation(problem)
    support, value = randomized_rounding(problem, root, config)
    lower = min(root.lower_bound, value)
    gap = relative_gap(value, lower)
    return SolveReport(
        support=support,
        objective=value,
        lower_bound=lower,
        gap=gap,
        nodes_explored=1,
        wall_time=time.perf_counter() - start,
        status="optimal" if gap <= 1e-9 else "limit_reached",
        root_value=root.value,
        incumbent_trace=[value],
    )


def solve_map(problem: SelectionProblem, method: BnBConfig | RoundingConfig | None = None):
    """Grid frequencies selected by the MAP support, ascending, with the report."""
    if problem.budget == 0:
        report = SolveReport(np.zeros(problem.K, bool), problem.energy, problem.energy,
                             0.0, 0, 0.0, "optimal", problem.energy, [problem.energy])
        return np.zeros(0), report
    if isinstance(method, RoundingConfig):
        report = rounding_report(problem, method)
    else:
        report = branch_and_bound(problem, method)
    return problem.frequencies(report.support), report
