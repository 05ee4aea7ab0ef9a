"""Shared fixtures and independent reference computations.

The oracles here use explicit matrix inverses and plain enumeration so they
share no code path with the package's solvers.
"""

import itertools

import numpy as np
import pytest

from mapdoa.model import ArrayGeometry, SteeringDictionary, preprocess
from mapdoa.objective import SelectionProblem


def random_problem(seed, M=None, K=None, L=None, N=None, rho=None, form="auto"):
    rng = np.random.default_rng(seed)
    M = int(rng.integers(3, 5)) if M is None else M
    K = int(rng.integers(8, 13)) if K is None else K
    L = int(rng.integers(1, 4)) if L is None else L
    N = int(rng.integers(1, 5)) if N is None else N
    rho = float(rng.choice([0.1, 1.0, 10.0])) if rho is None else rho
    d = SteeringDictionary.ula(M, K)
    Y = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    return SelectionProblem(d, preprocess(Y), L, rho, form=form)


def direct_objective(problem, u):
    """``Tr(Y^H (A D(u/rho) A^H + I)^{-1} Y)`` with an explicit inverse of raw Y."""
    A = problem.dictionary.A
    Y = problem.data.Y
    B = A @ np.diag(np.asarray(u, float) / problem.rho_vec) @ A.conj().T + np.eye(A.shape[0])
    return float(np.trace(Y.conj().T @ np.linalg.inv(B) @ Y).real)


def enumerate_supports(problem):
    """All feasible supports with their directly computed objective, best first."""
    out = []
    for s in range(problem.budget + 1):
        for S in itertools.combinations(range(problem.K), s):
            u = np.zeros(problem.K)
            u[list(S)] = 1.0
            out.append((direct_objective(problem, u), S))
    out.sort(key=lambda t: t[0])
    return out


def cofactor_inverse(B):
    """Inverse by the adjugate formula (cofactor expansion of determinants)."""

    def det(X):
        n = X.shape[0]
        if n == 1:
            return X[0, 0]
        return sum((-1) ** j * X[0, j] * det(np.delete(X[1:], j, axis=1)) for j in range(n))

    n = B.shape[0]
    C = np.empty_like(B, dtype=complex)
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(B, i, axis=0), j, axis=1)
            C[i, j] = (-1) ** (i + j) * det(minor)
    return C.T / det(B)


def random_hpd(rng, n, shift=0.5):
    X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return X @ X.conj().T + shift * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def ula8():
    return ArrayGeometry.ula(8)


@pytest.fixture(scope="session")
def dict8():
    return SteeringDictionary.ula(8, 100)


# one line per acceptance criterion, filled by test_acceptance and echoed at the end
ACCEPTANCE: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
