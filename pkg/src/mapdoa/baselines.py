"""Comparison estimators: brute-force DML, SPARROW, MUSIC, root-MUSIC, gridless refinement."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.optimize import minimize

from .errors import EnumerationTooLarge, RankDeficient, SubspaceDegenerate
from .model import ArrayGeometry, SnapshotSet, SteeringDictionary, steering_matrix, wrap_frequency
from .numerics import hermitian_eig, rank_one_update
from .objective import COND_LIMIT, concentrated_dml, concentrated_map

ENUMERATION_LIMIT = 10_000_000
_CHUNK = 200_000


def _subset_table(dictionary: SteeringDictionary, L: int):
    """All L-subsets of the grid with their inverse Gram matrices (cached).

    Subsets whose Gram condition number exceeds the rank-deficiency limit are
    dropped here, once per dictionary.
    """
    key = ("subsets", L)
    cached = dictionary.cache.get(key)
    if cached is not None:
        return cached
    G = dictionary.gram()
    S = np.array(list(itertools.combinations(range(dictionary.K), L)), dtype=np.intp)
    parts, keep = [], []
    for lo in range(0, len(S), _CHUNK):
        Sc = S[lo : lo + _CHUNK]
        Gs = G[Sc[:, :, None], Sc[:, None, :]]
        w = np.linalg.eigvalsh(Gs)
        ok = w[:, 0] > w[:, -1] / COND_LIMIT
        parts.append(np.linalg.inv(Gs[ok]))
        keep.append(Sc[ok])
    cached = (np.concatenate(keep), np.concatenate(parts))
    dictionary.cache[key] = cached
    return cached


def brute_force_dml(
    data: SnapshotSet,
    dictionary: SteeringDictionary,
    L: int,
    limit: int = ENUMERATION_LIMIT,
) -> np.ndarray:
    """Grid L-subset minimizing the concentrated DML cost, by exhaustive search.

    The cost ``N (tr R - tr(G_SS^{-1} C_SS))`` with ``C = A^H R A`` is minimized
    by maximizing the fitted trace; ties go to the lexicographically first
    subset.
    """
    if L < 1 or L > min(dictionary.K, data.M):
        raise ValueError("L must lie in [1, min(K, M)]")
    if comb(dictionary.K, L) > limit:
        raise EnumerationTooLarge(f"C({dictionary.K}, {L}) exceeds {limit}")
    S, Ginv = _subset_table(dictionary, L)
    if S.shape[0] == 0:
        raise RankDeficient("every subset is rank deficient")
    A = dictionary.A
    C = A.conj().T @ data.R @ A
    best, best_fit = -1, -np.inf
    for lo in range(0, len(S), _CHUNK):
        Sc = S[lo : lo + _CHUNK]
        Cs = C[Sc[:, None, :], Sc[:, :, None]]  # transposed block
        fit = np.einsum("nij,nij->n", Ginv[lo : lo + _CHUNK], Cs).real
        j = int(np.argmax(fit))
        if fit[j] > best_fit:
            best, best_fit = lo + j, fit[j]
    return dictionary.grid[S[best]]


def sparrow_lambda(noise_variance: float, M: int) -> float:
    """Heuristic regularization ``sqrt(sigma^2 M ln M)``."""
    if noise_variance <= 0:
        raise ValueError("noise variance must be positive")
    return float(np.sqrt(noise_variance * M * np.log(M)))


@dataclass
class SparrowState:
    s: np.ndarray
    lam: float
    trace: list = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False
    frequencies: np.ndarray | None = None
    short: bool = False


def sparrow_objective(s, R, A, lam) -> float:
    """``Tr((A D(s) A^H + lam I)^{-1} R) + sum(s)``."""
    M = A.shape[0]
    B = (A * s) @ A.conj().T + lam * np.eye(M)
    return float(np.trace(np.linalg.solve(B, R)).real + np.sum(s))


def sparrow_update(U: np.ndarray, a: np.ndarray, R: np.ndarray, s_k: float) -> float:
    """Optimal change ``d >= -s_k`` of one coordinate.

    With ``q = a^H U a`` and ``r = a^H U R U a`` the objective moves by
    ``d - d r / (1 + d q)``, which is convex in ``d`` on ``1 + d q > 0`` and
    stationary at ``1 + d q = sqrt(r)``.
    """
    Ua = U @ a
    q = float(np.vdot(a, Ua).real)
    r = float(np.vdot(Ua, R @ Ua).real)
    return max((np.sqrt(max(r, 0.0)) - 1.0) / q, -s_k)


def _circular_peaks(values: np.ndarray, L: int) -> np.ndarray:
    """Indices of the ``L`` largest circular local maxima (all of them if fewer)."""
    left = np.roll(values, 1)
    right = np.roll(values, -1)
    peaks = np.flatnonzero((values > left) & (values >= right))
    peaks = peaks[np.argsort(-values[peaks], kind="stable")][:L]
    return np.sort(peaks)


def sparrow_solve(
    data: SnapshotSet,
    dictionary: SteeringDictionary,
    lam: float,
    L: int | None = None,
    tol: float = 1e-8,
    iter_cap: int = 1000,
) -> SparrowState:
    """Cyclic coordinate descent on the SPARROW objective.

    Each coordinate moves to its exact one-dimensional minimizer and the
    inverse ``U = (A D(s) A^H + lam I)^{-1}`` follows by a Sherman-Morrison
    update. ``trace`` holds the objective after every sweep. With ``L`` set,
    ``frequencies`` are the grid points of the L largest peaks of ``s``;
    ``short`` flags fewer than L nonzero peaks.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    A, R = dictionary.A, data.R
    M, K = A.shape
    s = np.zeros(K)
    U = np.eye(M, dtype=complex) / lam
    obj = float(np.trace(U @ R).real)
    state = SparrowState(s, lam, [obj])
    for sweep in range(1, iter_cap + 1):
        biggest = 0.0
        for k in range(K):
            a = A[:, k]
            d = sparrow_update(U, a, R, s[k])
            if d == 0.0:
                continue
            rank_one_update(U, a, d)
            s[k] += d
            biggest = max(biggest, abs(d))
        U = 0.5 * (U + U.conj().T)
        state.trace.append(sparrow_objective(s, R, A, lam))
        state.sweeps = sweep
        if biggest <= tol:
            state.converged = True
            break
        # refresh the inverse now and then so rank-one drift stays bounded
        if sweep % 50 == 0:
            U = np.linalg.inv((A * s) @ A.conj().T + lam * np.eye(M))
    if L is not None:
        peaks = _circular_peaks(np.where(s > 0, s, 0.0), L)
        peaks = peaks[s[peaks] > 0]
        state.frequencies = dictionary.grid[peaks]
        state.short = peaks.size < L
    return state


def _noise_subspace(data: SnapshotSet, L: int) -> np.ndarray:
    if not 1 <= L < data.M:
        raise SubspaceDegenerate(f"need 1 <= L < M, got L={L}")
    _, V = hermitian_eig(data.R)
    return V[:, : data.M - L]


def music_spectrum(data: SnapshotSet, dictionary: SteeringDictionary, L: int) -> np.ndarray:
    En = _noise_subspace(data, L)
    proj = np.sum(np.abs(En.conj().T @ dictionary.A) ** 2, axis=0)
    return 1.0 / np.maximum(proj, 1e-300)


def music(data: SnapshotSet, dictionary: SteeringDictionary, L: int) -> np.ndarray:
    """Grid frequencies of the L largest local maxima of the MUSIC pseudospectrum."""
    peaks = _circular_peaks(music_spectrum(data, dictionary, L), L)
    if peaks.size < L:
        raise SubspaceDegenerate(f"only {peaks.size} spectral peaks for L={L}")
    return dictionary.grid[peaks]


def root_music_polynomial(data: SnapshotSet, L: int) -> np.ndarray:
    """Coefficients (highest power first) of ``z^{M-1} a(z)^H E_n E_n^H a(z)``.

    The coefficient of ``z^{d + M - 1}`` is the sum of ``C_mn`` over ``n - m = d``.
    """
    En = _noise_subspace(data, L)
    C = En @ En.conj().T
    M = data.M
    return np.array([np.trace(C, offset=d) for d in range(M - 1, -M, -1)])


def root_music(data: SnapshotSet, geometry: ArrayGeometry, L: int) -> np.ndarray:
    """Angles of the L roots closest to the unit circle, ascending.

    Roots outside the circle are folded onto their conjugate reciprocal and
    near-coincident angles are merged, so each pair (and each double root on
    the circle) is counted once.
    """
    if not geometry.is_ula:
        raise ValueError("root-MUSIC needs a uniform linear array")
    roots = np.roots(root_music_polynomial(data, L))
    roots = roots[np.abs(roots) > 1e-12]
    outside = np.abs(roots) > 1.0
    roots[outside] = 1.0 / roots[outside].conj()
    roots = roots[np.argsort(1.0 - np.abs(roots), kind="stable")]
    # a double root on the circle can split tangentially by ~sqrt(eps); the
    # halves straddle the true root, so merge anything far below the array
    # resolution 2 pi / M and keep the circular mean of each cluster
    merge = 0.01 * 2 * np.pi / data.M
    clusters: list[list[complex]] = []
    for z in roots:
        phasor = z / abs(z)
        for c in clusters:
            if len(c) < 2 and abs(np.angle(phasor * np.conj(c[0]))) <= merge:
                c.append(phasor)
                break
        else:
            clusters.append([phasor])
    if len(clusters) < L:
        raise SubspaceDegenerate(f"only {len(clusters)} distinct roots for L={L}")
    picked = [float(np.angle(sum(c))) for c in clusters[:L]]
    return np.sort(wrap_frequency(np.array(picked)))


def gridless_refine(
    initial,
    data: SnapshotSet,
    geometry: ArrayGeometry,
    objective: str = "dml",
    rho: float | None = None,
    cell: float = 2 * np.pi / 100,
    max_evals: int = 2000,
) -> np.ndarray:
    """Local Nelder-Mead search on the concentrated DML or MAP cost.

    The simplex starts at the initial point plus half a grid cell along each
    axis. The result is kept only if it strictly lowers the cost; otherwise
    the initial frequencies come back unchanged.
    """
    mu0 = np.atleast_1d(np.asarray(initial, dtype=float))
    if mu0.size == 0:
        return mu0.copy()
    if objective == "dml":
        def cost(mu):
            try:
                return concentrated_dml(mu, data, geometry)
            except RankDeficient:
                return np.inf
    elif objective == "map":
        if rho is None or rho <= 0:
            raise ValueError("map refinement needs rho > 0")
        def cost(mu):
            return concentrated_map(mu, data, geometry, rho)
    else:
        raise ValueError(f"unknown objective {objective!r}")

    f0 = cost(mu0)
    simplex = np.vstack([mu0, mu0 + 0.5 * cell * np.eye(mu0.size)])
    res = minimize(
        cost,
        mu0,
        method="Nelder-Mead",
        options={"initial_simplex": simplex, "maxfev": max_evals,
                 "xatol": 1e-10, "fatol": 1e-14 * max(abs(f0), 1.0)},
    )
    if not np.isfinite(res.fun) or res.fun >= f0 - 1e-13 * max(abs(f0), 1.0):
        return mu0.copy()
    return np.sort(wrap_frequency(res.x))
