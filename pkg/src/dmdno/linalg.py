"""Dense linear algebra used by DMD.

Thin, contract-checked wrappers around LAPACK (through numpy). All routines work
in double precision and return fresh arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError

MAX_EIG_SIZE = 64
PINV_RCOND = 1e-12
EIG_RESIDUAL = 1e-10


@dataclass(frozen=True)
class SvdFactors:
    u: np.ndarray  # (n, k), orthonormal columns
    sigma: np.ndarray  # (k,), non-increasing
    v: np.ndarray  # (m, k), orthonormal columns

    def truncated(self, r: int) -> np.ndarray:
        """Rank-``r`` reconstruction U_r diag(s_r) V_r^T."""
        return (self.u[:, :r] * self.sigma[:r]) @ self.v[:, :r].T


@dataclass(frozen=True)
class ComplexEigenpairs:
    values: np.ndarray  # (r,) complex
    vectors: np.ndarray  # (r, r) complex, unit-norm columns


def _as_matrix(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def svd(m) -> SvdFactors:
    """Thin SVD with a deterministic column sign.

    Each column of U is flipped (together with the matching column of V) so that
    its largest-magnitude entry is non-negative.
    """
    a = _as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    v = vt.T.copy()
    pivot = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    flip = np.where(pivot < 0, -1.0, 1.0)
    return SvdFactors(u * flip, s, v * flip)


def eig(a) -> ComplexEigenpairs:
    """Eigenpairs of a small real square matrix.

    Complex-conjugate pairs come out adjacent (positive imaginary part first),
    which is the LAPACK ``geev`` convention.
    """
    mat = _as_matrix(a)
    if mat.shape[0] != mat.shape[1]:
        raise InvalidInputError(f"eig needs a square matrix, got {mat.shape}")
    if mat.shape[0] > MAX_EIG_SIZE:
        raise InvalidInputError(f"eig is limited to side <= {MAX_EIG_SIZE}, got {mat.shape[0]}")
    try:
        w, vecs = np.linalg.eig(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}", iterations=None) from exc
    w = w.astype(np.complex128)
    vecs = vecs.astype(np.complex128)
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    # balancing can wreck eigenvectors of badly scaled input; fall back to the
    # null direction of (A - lambda I) for any pair that misses the residual bound
    tol = EIG_RESIDUAL * np.linalg.norm(mat)
    resid = np.linalg.norm(mat @ vecs - vecs * w, axis=0)
    for k in np.flatnonzero(resid > tol):
        _, _, vh = np.linalg.svd(mat - w[k] * np.eye(mat.shape[0]))
        vecs[:, k] = vh[-1].conj()
    return ComplexEigenpairs(w, vecs)


def lstsq_complex(a, y, rcond: float = PINV_RCOND) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a @ b = y`` via the pseudo-inverse.

    Singular values below ``rcond * sigma_max`` are treated as zero.
    """
    a = np.asarray(a, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"lstsq_complex needs a non-empty 2-D matrix, got shape {a.shape}")
    if y.shape != (a.shape[0],):
        raise InvalidInputError(f"rhs shape {y.shape} does not match matrix rows {a.shape[0]}")
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(a.shape[1], dtype=np.complex128)
    keep = s > rcond * s[0]
    coef = (u[:, keep].conj().T @ y) / s[keep]
    return vh[keep].conj().T @ coef
