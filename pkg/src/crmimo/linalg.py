"""Complex Hermitian linear-algebra kernels shared by all solvers.

Matrices are plain dense numpy arrays. Hermitian inputs are re-symmetrized
defensively, since iterated gradient updates accumulate round-off asymmetry.
All log-determinants are natural logs.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg


class InvalidInput(ValueError):
    """A matrix argument is malformed (non-square or non-finite)."""


class NotPositiveDefinite(ValueError):
    """A Cholesky factorization hit a pivot at or below tolerance."""


# Cholesky pivots (squared diagonal of the factor) at or below this value
# count as numerically singular.
PIVOT_TOL = 1e-14


def hermitian_part(a: np.ndarray) -> np.ndarray:
    """Return (A + A^H) / 2, the Hermitian part of a square matrix."""
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + a.conj().T)


def max_asymmetry(a: np.ndarray) -> float:
    """Largest entry-wise deviation of A from A^H."""
    a = np.asarray(a, dtype=complex)
    return float(np.abs(a - a.conj().T).max()) if a.size else 0.0


def _check_square_finite(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInput(f"expected a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise InvalidInput("matrix contains non-finite entries")
    return a


class EigenDecomposition(NamedTuple):
    """Eigenvalues sorted descending; unit-norm eigenvectors as columns."""

    values: np.ndarray
    vectors: np.ndarray


def eig_hermitian(a) -> EigenDecomposition:
    """Eigendecomposition of a Hermitian matrix, eigenvalues descending.

    Ties between exactly equal eigenvalues are broken by lexicographic
    comparison of the eigenvectors' real parts, so identical input bits
    always produce identical output.
    """
    a = _check_square_finite(a)
    w, v = np.linalg.eigh(hermitian_part(a))
    w = w[::-1].copy()
    v = v[:, ::-1].copy()
    n = w.size
    j = 0
    while j < n:
        k = j + 1
        while k < n and w[k] == w[j]:
            k += 1
        if k - j > 1:
            block = v[:, j:k]
            order = sorted(range(k - j), key=lambda c: tuple(block[:, c].real))
            v[:, j:k] = block[:, order]
        j = k
    return EigenDecomposition(w, v)


def psd_project(a) -> np.ndarray:
    """Project a Hermitian matrix onto the PSD cone by clipping eigenvalues.

    Returns the Frobenius-nearest PSD matrix; a matrix that is already PSD
    comes back unchanged (up to re-symmetrization).
    """
    w, v = eig_hermitian(a)
    if w[-1] >= 0.0:
        return hermitian_part(a)
    w = np.maximum(w, 0.0)
    return hermitian_part((v * w) @ v.conj().T)


def cholesky_pd(a) -> np.ndarray:
    """Lower Cholesky factor of a Hermitian positive definite matrix."""
    a = _check_square_finite(a)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    pivots = np.diagonal(chol).real ** 2
    if pivots.min() <= PIVOT_TOL:
        raise NotPositiveDefinite(
            f"Cholesky pivot {pivots.min():.3e} <= {PIVOT_TOL:.0e}"
        )
    return chol


def logdet_pd(a) -> float:
    """Natural log of det(A) for Hermitian positive definite A."""
    chol = cholesky_pd(a)
    return float(2.0 * np.log(np.diagonal(chol).real).sum())


def solve_pd(a, b) -> np.ndarray:
    """Solve A x = b for Hermitian positive definite A via Cholesky."""
    chol = cholesky_pd(a)
    b = np.asarray(b, dtype=complex)
    y = scipy.linalg.solve_triangular(chol, b, lower=True)
    return scipy.linalg.solve_triangular(chol.conj().T, y, lower=False)


def inv_pd(a) -> np.ndarray:
    """Inverse of a Hermitian positive definite matrix via Cholesky."""
    chol = cholesky_pd(a)
    eye = np.eye(chol.shape[0], dtype=complex)
    return hermitian_part(scipy.linalg.cho_solve((chol, True), eye))
