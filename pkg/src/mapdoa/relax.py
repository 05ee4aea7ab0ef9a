"""Interval relaxation of the selection problem.

Minimizes the convex selection objective over ``{u in [0,1]^K : sum(u) <= L}``
(optionally with some coordinates pinned to 0 or 1) by accelerated projected
gradient with backtracking and function-value restart. Every iterate also
yields a Frank-Wolfe certificate ``f(u) + min_v grad(u)^T (v - u)``, which
lower-bounds the relaxation whether or not the solver has converged.

The iteration runs in a compiled kernel; it needs ``A D(w) A^H`` only through
the lag table of :func:`mapdoa.objective._difference_tables`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .objective import SelectionProblem, _difference_tables, b_matrix, evaluate

STATIONARITY_TOL = 1e-7
# relative Frank-Wolfe gap required on top of stationarity
CERTIFICATE_TOL = 1e-7
MAX_ITER = 5000


@njit(cache=True)
def _clip_sum(v, theta):
    s = 0.0
    cnt = 0
    for i in range(v.size):
        w = v[i] - theta
        if w >= 1.0:
            s += 1.0
        elif w > 0.0:
            s += w
            cnt += 1
    return s, cnt


@njit(cache=True)
def _project(v, L):
    n = v.size
    u = np.minimum(np.maximum(v, 0.0), 1.0)
    # slack absorbs rounding in the sum so the map is idempotent
    if u.sum() <= L + 1e-12 * max(L, 1.0):
        return u
    if L <= 0:
        return np.zeros(n)
    # s(theta) = sum(clip(v - theta, 0, 1)) is piecewise linear and
    # nonincreasing; Newton steps on it are exact once the set of unclipped
    # terms stops changing, and a bracket [lo, hi] with s(lo) > L >= s(hi)
    # guards against cycling
    lo = 0.0
    hi = v.max()
    theta = 0.0
    for _ in range(4 * n + 60):
        s, cnt = _clip_sum(v, theta)
        if s > L:
            lo = theta
        else:
            hi = theta
        if s == L or hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
        nxt = theta + (s - L) / cnt if cnt > 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if nxt == theta:
            break
        theta = nxt
    return np.minimum(np.maximum(v - theta, 0.0), 1.0)


def project_capped_box(v, L: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{u in [0,1]^K : sum(u) <= L}``.

    If clamping to the box already meets the budget that clamp is returned.
    Otherwise the answer is ``clip(v - theta, 0, 1)`` where ``theta > 0`` is
    the root of the piecewise-linear, nonincreasing map
    ``theta -> sum(clip(v - theta, 0, 1)) - L``, found by bracketed Newton
    steps (exact on the final linear piece).
    """
    v = np.ascontiguousarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    return _project(v, float(L))


@njit(cache=True)
def _lmo(g, budget):
    if budget <= 0:
        return 0.0
    s = np.sort(g)
    out = 0.0
    for i in range(min(int(budget), s.size)):
        if s[i] >= 0.0:
            break
        out += s[i]
    return out


def _lmo_value(g: np.ndarray, budget: int) -> float:
    """``min g^T v`` over the capped box with integer budget ``budget``."""
    if g.size == 0:
        return 0.0
    return float(_lmo(np.ascontiguousarray(g, dtype=float), float(budget)))


@njit(cache=True)
def _fg(x, Ef, inv, B0, W, out_g):
    """Value and gradient of ``Tr(W^H (B0 + sum_k x_k E_k[inv])^{-1} W)``."""
    M = B0.shape[0]
    P, n = Ef.shape
    b = Ef @ x.astype(np.complex128)
    B = B0.copy()
    for i in range(M):
        for j in range(M):
            B[i, j] += b[inv[i * M + j]]
    C = np.zeros((M, M), np.complex128)
    for j in range(M):
        d = B[j, j].real
        for k in range(j):
            d -= C[j, k].real ** 2 + C[j, k].imag ** 2
        if d <= 1e-28:
            return np.nan
        d = np.sqrt(d)
        C[j, j] = d
        for i in range(j + 1, M):
            s = B[i, j]
            for k in range(j):
                s -= C[i, k] * np.conj(C[j, k])
            C[i, j] = s / d
    nw = W.shape[1]
    Z = W.copy()
    for c in range(nw):
        for i in range(M):
            s = Z[i, c]
            for k in range(i):
                s -= C[i, k] * Z[k, c]
            Z[i, c] = s / C[i, i].real
        for i in range(M - 1, -1, -1):
            s = Z[i, c]
            for k in range(i + 1, M):
                s -= np.conj(C[k, i]) * Z[k, c]
            Z[i, c] = s / C[i, i].real
    f = 0.0
    for i in range(M):
        for c in range(nw):
            f += (np.conj(W[i, c]) * Z[i, c]).real
    lag = np.zeros(P, np.complex128)
    for i in range(M):
        for j in range(M):
            s = 0.0j
            for c in range(nw):
                s += Z[i, c] * np.conj(Z[j, c])
            lag[inv[i * M + j]] += s
    for k in range(n):
        s = 0.0
        for p in range(P):
            s += Ef[p, k].real * lag[p].real + Ef[p, k].imag * lag[p].imag
        out_g[k] = -s
    return f


@njit(cache=True)
def _fista(x0, Ef, inv, B0, W, budget, tol, gap, max_iter, cutoff, use_cutoff):
    n = x0.size
    hist = np.empty(max_iter + 1)
    x = _project(x0, budget)
    gx = np.empty(n)
    fx = _fg(x, Ef, inv, B0, W, gx)
    Lc = max(np.max(np.abs(gx)), 1e-12)
    y = x.copy()
    fy = fx
    gy = gx.copy()
    gz = np.empty(n)
    t = 1.0
    at_x = True
    hist[0] = fx
    converged = False
    residual = np.inf
    lb = fx + _lmo(gx, budget) - gx @ x
    it = 0
    while it < max_iter:
        residual = np.max(np.abs(x - _project(x - gx / Lc, budget)))
        lb = fx + _lmo(gx, budget) - gx @ x
        if residual <= tol and fx - lb <= gap * max(1.0, abs(fx)):
            converged = True
            break
        if use_cutoff and lb >= cutoff:
            break
        it += 1
        while True:
            z = _project(y - gy / Lc, budget)
            d = z - y
            fz = _fg(z, Ef, inv, B0, W, gz)
            if fz <= fy + gy @ d + 0.5 * Lc * (d @ d) + 1e-14 * abs(fy):
                break
            Lc *= 2.0
        # a plain proximal step from x passed the descent test; taking it even
        # when rounding hides the decrease keeps the iterate moving
        if fz <= fx or at_x:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y_next = _project(z + ((t - 1.0) / t_next) * (z - x), budget)
            x = z
            fx = fz
            gx = gz.copy()
            t = t_next
            if np.all(y_next == z):
                y = x.copy()
                fy = fx
                gy = gx.copy()
                at_x = True
            else:
                y = y_next
                fy = _fg(y, Ef, inv, B0, W, gy)
                at_x = False
        else:
            t = 1.0
            y = x.copy()
            fy = fx
            gy = gx.copy()
            at_x = True
        hist[it] = fx
        Lc *= 0.9
    return x, fx, min(lb, fx), residual, 1.0 / Lc, it, converged, hist[: it + 1]


@dataclass
class FractionalSolution:
    """Result of an interval-relaxation solve.

    ``lower_bound`` is the Frank-Wolfe certificate at ``u``; it is a valid
    bound for the (possibly restricted) relaxation even when ``converged``
    is False.
    """

    u: np.ndarray
    value: float
    gradient: np.ndarray
    lower_bound: float
    residual: float = 0.0
    step: float = 0.0
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False)

    @property
    def is_integral(self) -> bool:
        return bool(np.all(np.minimum(self.u, 1.0 - self.u) <= 1e-9))


def solve_interval_relaxation(
    problem: SelectionProblem,
    u0=None,
    fixed_zero=None,
    fixed_one=None,
    tol: float = STATIONARITY_TOL,
    gap_tol: float = CERTIFICATE_TOL,
    max_iter: int = MAX_ITER,
    cutoff: float | None = None,
) -> FractionalSolution:
    """Solve the interval relaxation, optionally on a face of fixed coordinates.

    Convergence needs both the projected-gradient residual below ``tol`` and
    the Frank-Wolfe gap below ``gap_tol * max(1, |f|)``. ``cutoff`` stops the
    solve early once the certified lower bound reaches it (used for pruning
    inside branch-and-bound).
    """
    K = problem.K
    fz = np.zeros(K, bool) if fixed_zero is None else np.asarray(fixed_zero, bool)
    fo = np.zeros(K, bool) if fixed_one is None else np.asarray(fixed_one, bool)
    if np.any(fz & fo):
        raise ValueError("a coordinate cannot be fixed to both 0 and 1")
    free = ~(fz | fo)
    budget = problem.budget - int(fo.sum())
    if budget < 0:
        raise ValueError("more coordinates fixed to one than the budget allows")
    base = fo.astype(float)

    def full(x):
        u = base.copy()
        u[free] = x
        return u

    nfree = int(free.sum())
    if budget == 0 or nfree <= budget:
        # the optimum is forced: monotonicity puts every free atom at its cap
        x = np.zeros(nfree) if budget == 0 else np.ones(nfree)
        f, g = evaluate(problem, full(x))
        return FractionalSolution(full(x), f, g, f, history=[f])

    if u0 is None:
        x0 = np.full(nfree, problem.budget / K)
    else:
        x0 = np.asarray(u0, dtype=float)[free]
    inv, E, _, _, _ = _difference_tables(problem.dictionary)
    Ef = np.ascontiguousarray(E[:, free] / problem.rho_vec[free])
    x, fx, lb, residual, step, it, converged, hist = _fista(
        np.ascontiguousarray(x0),
        Ef,
        inv.astype(np.int64),
        b_matrix(problem, base),
        np.ascontiguousarray(problem.W, dtype=complex),
        float(budget),
        float(tol),
        float(gap_tol),
        int(max_iter),
        0.0 if cutoff is None else float(cutoff),
        cutoff is not None,
    )
    u = full(x)
    return FractionalSolution(
        u,
        float(fx),
        evaluate(problem, u)[1],
        float(lb),
        residual=float(residual),
        step=float(step),
        iterations=int(it),
        converged=bool(converged),
        history=hist.tolist(),
    )
