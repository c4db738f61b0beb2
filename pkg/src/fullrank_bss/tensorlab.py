"""Small complex Hermitian linear-algebra kernels.

Every function accepts either a single ``(M, M)`` matrix or a stack
``(..., M, M)`` and operates on the trailing two axes, so per-frequency
(or per time-frequency bin) batches are handled in one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EigDecomposition",
    "SingularCovarianceError",
    "hermitian_eig",
    "hermitize",
    "pseudoinverse",
    "reconstruct",
    "solve_hpd",
]

RIDGE_EPS = 1e-10
RIDGE_TRIGGER = 1e-12
SYMMETRY_DRIFT = 1e-8


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class EigDecomposition:
    """Eigenpairs of a (stack of) Hermitian matrices.

    ``eigenvalues`` are real and ascending along the last axis; column ``k``
    of ``eigenvectors`` is the unit-norm eigenvector of ``eigenvalues[..., k]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def hermitize(A: np.ndarray) -> np.ndarray:
    """Return ``(A + A^H) / 2``."""
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def _check_hermitian(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    A = A.astype(np.complex128, copy=False)
    AH = np.conj(np.swapaxes(A, -1, -2))
    scale = np.maximum(np.linalg.norm(A, axis=(-2, -1)), np.finfo(float).tiny)
    drift = np.linalg.norm(A - AH, axis=(-2, -1)) / scale
    if np.any(drift > SYMMETRY_DRIFT):
        raise ValueError(f"matrix is not Hermitian (relative drift {drift.max():.3g})")
    return 0.5 * (A + AH)


def hermitian_eig(A: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60) -> EigDecomposition:
    """Eigendecomposition by the cyclic complex Jacobi method.

    Each rotation first removes the phase of ``A[p, q]`` with a diagonal
    unitary and then applies the real Jacobi rotation that annihilates the
    now-real entry. Sweeps stop once the off-diagonal Frobenius norm drops
    below ``tol`` times the Frobenius norm of the input.
    """
    A = _check_hermitian(A).copy()
    single = A.ndim == 2
    if single:
        A = A[None]
    batch_shape = A.shape[:-2]
    M = A.shape[-1]
    A = A.reshape(-1, M, M)
    V = np.broadcast_to(np.eye(M, dtype=np.complex128), A.shape).copy()

    norm = np.linalg.norm(A, axis=(-2, -1))
    off_mask = ~np.eye(M, dtype=bool)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.abs(A[:, off_mask]) ** 2, axis=-1))
        if np.all(off <= tol * norm):
            break
        for p in range(M - 1):
            for q in range(p + 1, M):
                apq = A[:, p, q]
                mag = np.abs(apq)
                active = mag > tol * norm * 1e-3
                if not np.any(active):
                    continue
                safe = np.where(active, mag, 1.0)
                phase = np.where(active, apq / safe, 1.0)
                theta = (A[:, q, q].real - A[:, p, p].real) / (2.0 * safe)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(theta == 0.0, 1.0, t)
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # U = diag(.., 1, .., conj(phase), ..) @ real rotation in (p, q)
                u_pp = c
                u_pq = s
                u_qp = -s * np.conj(phase)
                u_qq = c * np.conj(phase)

                col_p = A[:, :, p].copy()
                col_q = A[:, :, q]
                A[:, :, p] = col_p * u_pp[:, None] + col_q * u_qp[:, None]
                A[:, :, q] = col_p * u_pq[:, None] + col_q * u_qq[:, None]
                row_p = A[:, p, :].copy()
                row_q = A[:, q, :]
                A[:, p, :] = row_p * np.conj(u_pp)[:, None] + row_q * np.conj(u_qp)[:, None]
                A[:, q, :] = row_p * np.conj(u_pq)[:, None] + row_q * np.conj(u_qq)[:, None]
                A[:, p, q] = np.where(active, 0.0, A[:, p, q])
                A[:, q, p] = np.where(active, 0.0, A[:, q, p])

                vp = V[:, :, p].copy()
                vq = V[:, :, q]
                V[:, :, p] = vp * u_pp[:, None] + vq * u_qp[:, None]
                V[:, :, q] = vp * u_pq[:, None] + vq * u_qq[:, None]

    w = np.diagonal(A, axis1=-2, axis2=-1).real
    order = np.argsort(w, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    V /= np.linalg.norm(V, axis=-2, keepdims=True)

    w = w.reshape(batch_shape + (M,))
    V = V.reshape(batch_shape + (M, M))
    if single:
        w, V = w[0], V[0]
    return EigDecomposition(eigenvalues=w, eigenvectors=V)


def reconstruct(eig: EigDecomposition) -> np.ndarray:
    """``V diag(w) V^H``."""
    V = eig.eigenvectors
    return (V * eig.eigenvalues[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def solve_hpd(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A X = B`` for Hermitian positive-definite ``A``.

    Matrices whose smallest eigenvalue falls below ``1e-12 * trace(A) / M``
    are regularized with a ridge of ``1e-10 * trace(A) / M`` before solving.
    ``B`` may be a vector stack ``(..., M)`` or a matrix stack ``(..., M, K)``.
    """
    A = hermitize(np.asarray(A, dtype=np.complex128))
    B = np.asarray(B)
    M = A.shape[-1]
    vector_rhs = B.ndim == A.ndim - 1
    if vector_rhs:
        B = B[..., None]

    mean_eig = np.trace(A, axis1=-2, axis2=-1).real / M
    if np.any(mean_eig <= 0.0):
        raise SingularCovarianceError("singular covariance")
    lam_min = np.linalg.eigvalsh(A)[..., 0]
    needs_ridge = lam_min < RIDGE_TRIGGER * mean_eig
    if np.any(needs_ridge):
        ridge = np.where(needs_ridge, RIDGE_EPS * mean_eig, 0.0)
        A = A + ridge[..., None, None] * np.eye(M)
    X = np.linalg.solve(A, np.broadcast_to(B, A.shape[:-2] + B.shape[-2:]))
    return X[..., 0] if vector_rhs else X


def pseudoinverse(A: np.ndarray, rank_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose inverse of a PSD Hermitian matrix via its eigenpairs.

    Eigenvalues below ``rank_tol`` (default ``1e-10`` times the largest
    eigenvalue of each matrix) are treated as zero.
    """
    eig = hermitian_eig(A)
    w = eig.eigenvalues
    if rank_tol is None:
        tol = 1e-10 * np.max(w, axis=-1, keepdims=True)
    else:
        tol = np.full(w.shape[:-1] + (1,), float(rank_tol))
    keep = (w > tol) & (w > 0)
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return reconstruct(EigDecomposition(inv_w, eig.eigenvectors))
