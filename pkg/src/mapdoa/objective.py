"""Concentrated DML/MAP objectives and the support-selection objective.

For a selection vector ``u`` the MAP cost after eliminating the waveforms is

    f(u) = Tr(W^H (A D(u / rho) A^H + I)^{-1} W)

where ``W`` is either the raw snapshot matrix ``Y`` (N <= M) or its
compression ``Yhat`` (N > M); both give the same value. For binary ``u`` with
few active atoms the equivalent s x s Gram form is used instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RankDeficient
from .model import ArrayGeometry, Scenario, SnapshotSet, SteeringDictionary, steering_matrix
from .numerics import cholesky, cholesky_solve

COND_LIMIT = 1e12


@dataclass
class SelectionProblem:
    """Binary support selection with budget ``budget`` over a dictionary.

    ``rho`` is a scalar or a per-atom vector of Tikhonov weights. ``form``
    picks the data matrix: ``"snapshots"`` uses ``Y``, ``"compressed"`` uses
    ``Yhat`` and ``"auto"`` picks ``Y`` when ``N <= M``.
    """

    dictionary: SteeringDictionary
    data: SnapshotSet
    budget: int
    rho: float | np.ndarray
    form: str = "auto"

    W: np.ndarray = field(init=False, repr=False)
    rho_vec: np.ndarray = field(init=False, repr=False)
    energy: float = field(init=False, repr=False)
    AhW: np.ndarray = field(init=False, repr=False)
    Q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        K = self.dictionary.K
        if not 0 <= self.budget <= K:
            raise ValueError(f"budget must lie in [0, {K}]")
        rho = np.broadcast_to(np.asarray(self.rho, dtype=float), (K,)).copy()
        if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
            raise ValueError("regularization weights must be finite and positive")
        if self.data.M != self.dictionary.M:
            raise ValueError("data and dictionary disagree on M")
        if self.form == "auto":
            self.form = "snapshots" if self.data.N <= self.data.M else "compressed"
        if self.form == "snapshots":
            self.W = self.data.Y
        elif self.form == "compressed":
            self.W = self.data.Yhat
        else:
            raise ValueError(f"unknown form {self.form!r}")
        self.rho_vec = rho
        self.energy = float(np.vdot(self.W, self.W).real)
        self.AhW = self.dictionary.A.conj().T @ self.W
        self.Q = self.AhW @ self.AhW.conj().T

    @classmethod
    def from_scenario(cls, dictionary, data, scenario: Scenario, budget=None, **kw):
        """Problem with ``rho = sigma^2 / gamma`` taken from a scenario."""
        gamma = np.unique(scenario.variances)
        if gamma.size != 1:
            raise ValueError("per-source variances do not define a uniform rho")
        L = scenario.L if budget is None else budget
        return cls(dictionary, data, L, scenario.noise_variance / float(gamma[0]), **kw)

    @property
    def K(self) -> int:
        return self.dictionary.K

    @property
    def M(self) -> int:
        return self.dictionary.M

    @property
    def uniform_rho(self) -> bool:
        return bool(np.all(self.rho_vec == self.rho_vec[0]))

    def with_form(self, form: str) -> "SelectionProblem":
        return SelectionProblem(self.dictionary, self.data, self.budget, self.rho_vec, form)

    def frequencies(self, support) -> np.ndarray:
        support = np.asarray(support)
        idx = np.flatnonzero(support) if support.dtype == bool else np.sort(support)
        return self.dictionary.grid[idx]


def _gram_table(problem: SelectionProblem) -> np.ndarray:
    return problem.dictionary.gram()


def _difference_tables(dictionary: SteeringDictionary):
    """Tables that express ``A D(w) A^H`` through sensor-position differences.

    Entry ``(m, n)`` of ``A D(w) A^H`` is ``sum_k w_k exp(j nu_k (xi_m - xi_n))``
    so it only depends on the lag ``xi_m - xi_n``; a ULA has 2M - 1 lags.
    """
    tabs = dictionary.cache.get("lags")
    if tabs is None:
        xi = dictionary.geometry.positions
        M = xi.size
        lags, inv = np.unique(np.subtract.outer(xi, xi), return_inverse=True)
        inv = inv.ravel()
        E = np.exp(1j * np.outer(lags, dictionary.grid))
        sel = np.zeros((lags.size, M * M))
        sel[inv, np.arange(M * M)] = 1.0
        tabs = (inv, E, np.ascontiguousarray(E.real.T), np.ascontiguousarray(E.imag.T), sel)
        dictionary.cache["lags"] = tabs
    return tabs


def b_matrix(problem: SelectionProblem, u) -> np.ndarray:
    """``B(u) = A D(u / rho) A^H + I``."""
    inv, E, _, _, _ = _difference_tables(problem.dictionary)
    M = problem.M
    B = (E @ (np.asarray(u, dtype=float) / problem.rho_vec))[inv].reshape(M, M)
    B.flat[:: M + 1] += 1.0
    return B


def evaluate(problem: SelectionProblem, u) -> tuple[float, np.ndarray]:
    """Objective and gradient at ``u`` via the M x M form."""
    _, _, ER, EI, sel = _difference_tables(problem.dictionary)
    Z = cholesky_solve(cholesky(b_matrix(problem, u)), problem.W)
    f = float(np.vdot(problem.W, Z).real)
    s = sel @ (Z @ Z.conj().T).ravel()
    g = -(ER @ s.real + EI @ s.imag)
    return f, g / problem.rho_vec


def hessian_block(problem: SelectionProblem, u, idx) -> np.ndarray:
    """Rows/columns ``idx`` of the Hessian of f at ``u``.

    ``H_kl = 2 Re[(a_k^H X a_l)(a_l^H S a_k)] / (rho_k rho_l)`` with
    ``X = B^{-1}`` and ``S = X W W^H X``.
    """
    idx = np.asarray(idx, dtype=np.intp)
    Lc = cholesky(b_matrix(problem, u))
    Ai = problem.dictionary.A[:, idx]
    XA = cholesky_solve(Lc, Ai)
    V = XA.conj().T @ problem.W
    Px = Ai.conj().T @ XA
    Ps = V @ V.conj().T
    r = problem.rho_vec[idx]
    return 2.0 * (Px * Ps.T).real / np.outer(r, r)


def _is_binary(u: np.ndarray) -> bool:
    return bool(np.all((u == 0.0) | (u == 1.0)))


def selection_objective(problem: SelectionProblem, u) -> float:
    u = np.asarray(u, dtype=float)
    if _is_binary(u) and u.sum() <= problem.M:
        return support_objective(problem, np.flatnonzero(u))
    W = problem.W
    Z = cholesky_solve(cholesky(b_matrix(problem, u)), W)
    return float(np.vdot(W, Z).real)


def selection_gradient(problem: SelectionProblem, u) -> np.ndarray:
    """``df/du_k = -(1/rho_k) ||a_k^H B(u)^{-1} W||^2``."""
    return evaluate(problem, u)[1]


def support_objective(problem: SelectionProblem, support) -> float:
    """f at the binary vector selecting ``support`` (indices or mask), s x s form."""
    support = np.asarray(support)
    idx = np.flatnonzero(support) if support.dtype == bool else support.astype(int)
    if idx.size == 0:
        return problem.energy
    return float(support_objectives(problem, idx[None, :])[0])


def support_objectives(problem: SelectionProblem, supports: np.ndarray) -> np.ndarray:
    """Batched objective for an ``(n, s)`` array of atom indices.

    ``f = ||W||^2 - Re Tr((G_SS + D(rho_S))^{-1} Q_SS)`` with ``G = A^H A`` and
    ``Q = A^H W W^H A``.
    """
    S = np.asarray(supports, dtype=np.intp)
    if S.ndim != 2:
        raise ValueError("supports must be an (n, s) index array")
    n, s = S.shape
    if s == 0:
        return np.full(n, problem.energy)
    G = _gram_table(problem)
    r, c = S[:, :, None], S[:, None, :]
    Gs = G[r, c] + np.eye(s) * problem.rho_vec[S][:, :, None]
    Qs = problem.Q[r, c]
    X = np.linalg.solve(Gs, Qs)
    tr = np.trace(X, axis1=1, axis2=2).real
    return np.maximum(problem.energy - tr, 0.0)


def _trace_terms(mus, data: SnapshotSet, geometry: ArrayGeometry):
    Am = steering_matrix(geometry, mus)
    G = Am.conj().T @ Am
    C = Am.conj().T @ data.R @ Am
    return G, C, data.N * float(np.trace(data.R).real)


def concentrated_dml(frequencies, data: SnapshotSet, geometry: ArrayGeometry) -> float:
    """``Tr(Y^H P_perp Y)`` with ``P_perp`` the projector off ``span A(mu)``."""
    mus = np.atleast_1d(np.asarray(frequencies, dtype=float))
    total = data.N * float(np.trace(data.R).real)
    if mus.size == 0:
        return total
    G, C, total = _trace_terms(mus, data, geometry)
    if mus.size > data.M or np.linalg.cond(G) > COND_LIMIT:
        raise RankDeficient("steering matrix is (nearly) rank deficient")
    fit = data.N * float(np.trace(np.linalg.solve(G, C)).real)
    return float(min(max(total - fit, 0.0), total))


def concentrated_map(frequencies, data: SnapshotSet, geometry: ArrayGeometry, rho) -> float:
    """``Tr(Y^H (I - A (A^H A + D(rho))^{-1} A^H) Y)``, the L'-dimensional MAP cost."""
    mus = np.atleast_1d(np.asarray(frequencies, dtype=float))
    total = data.N * float(np.trace(data.R).real)
    if mus.size == 0:
        return total
    G, C, total = _trace_terms(mus, data, geometry)
    G = G + np.diag(np.broadcast_to(np.asarray(rho, dtype=float), (mus.size,)))
    fit = data.N * float(np.trace(np.linalg.solve(G, C)).real)
    return float(max(total - fit, 0.0))
