"""Hermitian-matrix helpers shared across modules."""

from __future__ import annotations

import numpy as np

from .errors import DomainError


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix.

    Eigenvalues below zero (numerical asphericity) are clipped at 0.
    """
    w, v = np.linalg.eigh(hermitize(np.asarray(a, dtype=complex)))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def psd_clip(a: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix: clip negative eigenvalues of the Hermitian part at 0."""
    w, v = np.linalg.eigh(hermitize(np.asarray(a, dtype=complex)))
    if w[0] >= 0.0:
        return hermitize(np.asarray(a, dtype=complex))
    w = np.clip(w, 0.0, None)
    return (v * w) @ v.conj().T


def logdet_hermitian(a: np.ndarray, min_eig: float = -1e-8) -> float:
    """log det of a Hermitian positive-definite matrix via Cholesky.

    Falls back to an eigenvalue sum when the matrix is only PSD to rounding;
    eigenvalues below ``min_eig`` raise a domain error.
    """
    a = hermitize(np.asarray(a, dtype=complex))
    try:
        chol = np.linalg.cholesky(a)
        return float(2.0 * np.sum(np.log(np.real(np.diag(chol)))))
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(a)
        if w[0] < min_eig:
            raise DomainError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
        w = np.clip(w, np.finfo(float).tiny, None)
        return float(np.sum(np.log(w)))


def check_psd(a: np.ndarray, tol: float = 1e-8, what: str = "matrix") -> None:
    w = np.linalg.eigvalsh(hermitize(np.asarray(a, dtype=complex)))
    if w[0] < -tol:
        raise DomainError(f"{what} is not positive semidefinite (min eigenvalue {w[0]:.3e})")
