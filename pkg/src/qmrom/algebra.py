"""Dense linear algebra helpers shared by the other modules.

Matrices are plain row-major ``numpy`` arrays. Third-order tensors are
arrays of shape ``(n, m, m)``; the slice ``T[:, i, j]`` is a length-``n``
vector, and "contracting" a tensor with a vector always sums over the
last index.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .errors import SingularMatrixError

__all__ = [
    "EigenPairs",
    "sym_generalized_eig",
    "solve_bordered",
    "symmetrize3",
    "contract_t3",
    "contract_t3_once",
    "deflate_basis",
    "fix_signs",
]

SYMMETRY_TOL = 1e-10


@dataclass(frozen=True)
class EigenPairs:
    """Eigenvalues ``omega^2`` (ascending) and mass-normalized vectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray

    @property
    def frequencies(self) -> np.ndarray:
        return np.sqrt(np.abs(self.values))


def _check_symmetric(A, name, tol=SYMMETRY_TOL):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    asym = np.abs(A - A.T).max()
    if asym > tol * scale:
        raise ValueError(f"{name} is not symmetric (max |A - A^T| = {asym:.3e})")
    return A


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive.

    Entries within a relative ``1e-8`` of the column maximum count as ties;
    the first of them decides the sign, which keeps antisymmetric shapes
    reproducible.
    """
    V = np.array(V, dtype=float, copy=True)
    for k in range(V.shape[1]):
        col = np.abs(V[:, k])
        top = col.max()
        if top == 0.0:
            continue
        idx = int(np.argmax(col >= (1.0 - 1e-8) * top))
        if V[idx, k] < 0.0:
            V[:, k] *= -1.0
    return V


def sym_generalized_eig(K, M, m: int) -> EigenPairs:
    """Smallest ``m`` eigenpairs of the symmetric-definite pencil ``(K, M)``.

    Vectors are normalized so that ``phi^T M phi = 1`` and carry the
    deterministic sign convention of :func:`fix_signs`.

    Raises
    ------
    ValueError
        If ``K`` or ``M`` is not symmetric, or ``m`` is out of range.
    SingularMatrixError
        If ``M`` is not positive definite or the solver fails.
    """
    K = _check_symmetric(K, "K")
    M = _check_symmetric(M, "M")
    n = K.shape[0]
    if M.shape != K.shape:
        raise ValueError(f"shape mismatch: K {K.shape}, M {M.shape}")
    if not 1 <= m <= n:
        raise ValueError(f"requested {m} eigenpairs from a system of size {n}")
    try:
        la.cholesky(M, lower=True)
    except la.LinAlgError as exc:
        raise SingularMatrixError("mass matrix is not positive definite") from exc
    try:
        w, V = la.eigh(K, M, subset_by_index=[0, m - 1])
    except la.LinAlgError as exc:
        raise SingularMatrixError(f"generalized eigensolver failed: {exc}") from exc
    # one Rayleigh-Ritz rotation of the vectors: V^T K V comes out diagonal to
    # round-off relative to its own entries rather than to the stiffest DOF.
    # The eigenvalues stay LAPACK's, which are more accurate for low modes.
    Kr, Mr = V.T @ K @ V, V.T @ M @ V
    _, Q = la.eigh(0.5 * (Kr + Kr.T), 0.5 * (Mr + Mr.T))
    V = V @ Q
    V = V / np.sqrt(np.einsum("ik,ij,jk->k", V, M, V))
    return EigenPairs(values=w, vectors=fix_signs(V))


def solve_bordered(A, b, rhs, rcond: float = 1e-13):
    """Solve ``[[A, -b], [-b^T, 0]] [x; lam] = [rhs; 0]``.

    Returns ``(x, lam)``; by construction ``b^T x = 0``. The bordered matrix
    is factorized by dense LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If the bordered matrix is numerically singular, which for a modal
        derivative solve means the eigenvalue is not simple.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    rhs = np.asarray(rhs, dtype=float).ravel()
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,) or rhs.shape != (n,):
        raise ValueError("inconsistent shapes for bordered solve")
    # scale the border to the magnitude of A so pivots are comparable
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        raise SingularMatrixError("bordered matrix is singular: zero border vector")
    s = max(np.abs(A).max(), np.finfo(float).tiny) / bnorm
    B = np.zeros((n + 1, n + 1))
    B[:n, :n] = A
    B[:n, n] = -s * b
    B[n, :n] = -s * b
    with warnings.catch_warnings():
        # exact singularity is reported by the pivot test below
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(B, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= rcond * d.max():
        raise SingularMatrixError(
            "bordered matrix is singular: the eigenvalue has multiplicity > 1 "
            "(repeated eigenvalues are not supported for modal derivatives)"
        )
    sol = la.lu_solve((lu, piv), np.append(rhs, 0.0))
    return sol[:n], float(s * sol[n])


def symmetrize3(Omega):
    """Split ``Omega`` into parts symmetric / antisymmetric in the last two indices."""
    Omega = np.asarray(Omega, dtype=float)
    if Omega.ndim != 3 or Omega.shape[1] != Omega.shape[2]:
        raise ValueError(f"expected an (n, m, m) tensor, got shape {Omega.shape}")
    Theta = 0.5 * (Omega + Omega.transpose(0, 2, 1))
    Lambda = 0.5 * (Omega - Omega.transpose(0, 2, 1))
    return Theta, Lambda


def contract_t3_once(T, a) -> np.ndarray:
    """``(T . a)_{Ii} = T_{Iij} a_j``, an ``n x m`` matrix."""
    T = np.asarray(T, dtype=float)
    a = np.asarray(a, dtype=float)
    if T.ndim != 3 or a.shape != (T.shape[2],):
        raise ValueError(f"cannot contract tensor {T.shape} with vector {a.shape}")
    return T @ a


def contract_t3(T, a, b) -> np.ndarray:
    """``((T . a) . b)_I = T_{Iij} a_j b_i``, a length-``n`` vector."""
    b = np.asarray(b, dtype=float)
    Ta = contract_t3_once(T, a)
    if b.shape != (Ta.shape[1],):
        raise ValueError(f"cannot contract with vector of shape {b.shape}")
    return Ta @ b


def deflate_basis(V, rel_tol: float = 1e-8) -> np.ndarray:
    """Orthonormal basis for the column space of ``V``.

    Left singular vectors whose singular value falls below
    ``rel_tol * sigma_max`` are discarded.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] < 1:
        raise ValueError("basis must have at least one column")
    U, s, _ = la.svd(V, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("cannot deflate an all-zero basis")
    r = int(np.count_nonzero(s >= rel_tol * s[0]))
    return fix_signs(U[:, :r])
