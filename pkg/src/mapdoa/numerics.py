"""Dense complex linear algebra for the small (M <= 32) matrices used here.

LAPACK (through numpy/scipy) does the heavy lifting. The wrappers below pin
the tolerances and failure modes the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from .errors import NoConvergence, NotPositiveDefinite, NotPSD

PIVOT_TOL = 1e-14
PSD_TOL = 1e-10


def cholesky(B: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian positive definite matrix.

    Raises :class:`NotPositiveDefinite` if LAPACK fails or a pivot of the
    factor is <= 1e-14.
    """
    Lc, info = lapack.zpotrf(np.asarray(B, dtype=complex), lower=1, clean=1)
    if info != 0:
        raise NotPositiveDefinite(f"Cholesky failed (info={info})")
    if np.min(np.diagonal(Lc).real) <= PIVOT_TOL:
        raise NotPositiveDefinite("Cholesky pivot below 1e-14")
    return Lc


def cholesky_solve(Lc: np.ndarray, C: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=complex)
    Z, info = lapack.zpotrs(Lc, C if C.ndim == 2 else C[:, None], lower=1)
    if info != 0:  # pragma: no cover - only on malformed input
        raise ValueError(f"zpotrs failed (info={info})")
    return Z if C.ndim == 2 else Z[:, 0]


def hermitian_solve(B: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Solve ``B Z = C`` for Hermitian positive definite ``B``."""
    B = np.asarray(B)
    C = np.asarray(C)
    if B.ndim != 2 or B.shape[0] != B.shape[1] or C.shape[0] != B.shape[0]:
        raise ValueError(f"incompatible shapes {B.shape} and {C.shape}")
    return cholesky_solve(cholesky(B), C)


def hermitian_eig(B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and unitary eigenvectors of a Hermitian matrix."""
    B = np.asarray(B)
    if not np.all(np.isfinite(B)):
        raise NoConvergence("non-finite entries")
    try:
        w, V = np.linalg.eigh(B)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from None
    return w, V


def psd_sqrt(B: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root.

    Eigenvalues in ``[-1e-10 * ||B||, 0)`` are treated as round-off and
    clamped to zero; anything more negative raises :class:`NotPSD`.
    """
    w, V = hermitian_eig(B)
    scale = np.max(np.abs(w)) if w.size else 0.0
    if w.size and w[0] < -PSD_TOL * scale:
        raise NotPSD(f"eigenvalue {w[0]:.3e} below tolerance")
    w = np.clip(w, 0.0, None)
    S = (V * np.sqrt(w)) @ V.conj().T
    return 0.5 * (S + S.conj().T)


def hermitize(B: np.ndarray) -> np.ndarray:
    return 0.5 * (B + B.conj().T)


def rank_one_update(U: np.ndarray, x: np.ndarray, d: float) -> np.ndarray:
    """In-place Sherman-Morrison: ``U <- (U^{-1} + d x x^H)^{-1}`` for Hermitian ``U``.

    Requires ``1 + d x^H U x > 0``, which holds whenever the updated matrix
    stays positive definite.
    """
    Ux = U @ x
    denom = 1.0 + d * float(np.vdot(x, Ux).real)
    if denom <= 0.0:
        raise NotPositiveDefinite("rank-one update leaves the positive definite cone")
    U -= (d / denom) * np.outer(Ux, Ux.conj())
    return U
