"""Dense linear algebra: ridge pseudo-inverses, orthogonal init, norms.

Everything operates on float64 numpy arrays. The one piece of state in this
module is a monotone counter of Cholesky factorizations, used by tests and by
the benchmark command to verify that backward passes amortize their matrix
inversions (one factorization per backward call, however long the sequence).
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class DimensionMismatch(ValueError):
    """Operand shapes do not line up."""


class SingularSystem(ValueError):
    """The normal-equations matrix is not positive definite.

    Raised when r = 0 and W is rank deficient (or the system has overflowed
    to non-finite values, which the training loop treats as divergence).
    """


_factorizations = 0


def factorization_count() -> int:
    """Total Cholesky factorizations performed since import."""
    return _factorizations


def ridge_pinv(W: np.ndarray, r: float) -> np.ndarray:
    """Regularized pseudo-inverse V = (W^T W + r I)^{-1} W^T.

    The normal equations (W^T W + r I) V = W^T are solved through a single
    Cholesky factorization of the symmetric positive definite system matrix,
    counted by :func:`factorization_count`.

    Parameters
    ----------
    W : (m, n) array
    r : float
        Ridge coefficient, must be nonnegative. With r = 0 the matrix W has
        to be full column rank, otherwise SingularSystem is raised.

    Returns
    -------
    (n, m) array
    """
    global _factorizations
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {W.shape}")
    if r < 0:
        raise ValueError(f"ridge coefficient must be nonnegative, got {r}")
    n = W.shape[1]
    A = W.T @ W
    A[np.diag_indices(n)] += r
    if not np.all(np.isfinite(A)):
        raise SingularSystem("normal equations contain non-finite entries")
    try:
        factor = cho_factor(A, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(
            f"W^T W + {r} I is not positive definite (rank-deficient W?)"
        ) from exc
    _factorizations += 1
    V = cho_solve(factor, W.T)
    if not np.all(np.isfinite(V)):
        raise SingularSystem("ridge solve produced non-finite entries")
    return V


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Random (semi-)orthogonal matrix drawn via QR of a Gaussian.

    The sign of R's diagonal is folded into Q so the distribution does not
    depend on the QR implementation's sign convention. Square outputs are
    orthogonal; rectangular ones have orthonormal rows or columns, whichever
    fits.
    """
    wide = cols > rows
    a = rng.standard_normal((cols, rows) if wide else (rows, cols))
    q, rdiag = np.linalg.qr(a)
    s = np.sign(np.diag(rdiag))
    s[s == 0] = 1.0
    q = q * s
    # keep parameter tensors C-contiguous whatever LAPACK hands back
    return np.ascontiguousarray(q.T if wide else q)


def orthogonal_init(p: int, seed: int) -> np.ndarray:
    """Deterministic random orthogonal p x p matrix for the given seed."""
    return orthogonal(np.random.default_rng(seed), p, p)


def matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionMismatch(f"cannot multiply {A.shape} by {B.shape}")
    return A @ B


def matvec(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product with an explicit shape check."""
    A = np.asarray(A)
    x = np.asarray(x)
    if A.ndim != 2 or x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise DimensionMismatch(f"cannot apply {A.shape} to vector {x.shape}")
    return A @ x


def frobenius_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(A, dtype=np.float64)))


def spectral_norm(A: np.ndarray, max_iter: int = 100, tol: float = 1e-9) -> float:
    """Largest singular value via power iteration on A^T A.

    Runs at most ``max_iter`` iterations, stopping early once the Rayleigh
    quotient's relative change drops below ``tol``. Vectors are treated as
    single-column matrices, so their spectral norm is the Euclidean norm.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise DimensionMismatch(f"expected a matrix or vector, got shape {A.shape}")
    if A.size == 0:
        return 0.0
    B = A.T @ A
    n = B.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    sigma2 = 0.0
    prev = -1.0
    for _ in range(max_iter):
        w = B @ v
        sigma2 = float(v @ w)
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0
        v = w / nw
        if prev >= 0.0 and abs(sigma2 - prev) <= tol * max(prev, 1e-300):
            break
        prev = sigma2
    return float(np.sqrt(max(sigma2, 0.0)))
