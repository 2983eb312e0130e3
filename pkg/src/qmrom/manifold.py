"""Reduction mappings: linear bases, the quadratic manifold and (S)MD selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .algebra import contract_t3, contract_t3_once, deflate_basis, symmetrize3
from .modal import ModalAmplitudeHistory, ModalBasis, ModalDerivativeSet
from .model import StructuralModel

__all__ = [
    "LinearManifold",
    "QuadraticManifold",
    "WeightMatrix",
    "build_linear_manifold",
    "build_quadratic_manifold",
    "qm_map",
    "qm_tangent",
    "qm_kinematics",
    "mmi_weights",
    "mvw_weights",
    "select_top_k",
    "pod_basis",
    "DEFLATION_RTOL",
]

DEFLATION_RTOL = 1e-8


@dataclass(frozen=True)
class LinearManifold:
    """Orthonormal reduction basis ``V`` (``u = V q``).

    ``provenance`` lists the source of each candidate column before
    deflation (``"VM1"``, ``"SMD(1,2)"``, ``"POD3"``, ...), so
    ``nominal_size`` is the size the basis would have without deflation and
    ``size`` the number of columns actually kept.
    """

    V: np.ndarray
    provenance: tuple = ()

    @property
    def size(self) -> int:
        return self.V.shape[1]

    @property
    def nominal_size(self) -> int:
        return len(self.provenance) if self.provenance else self.size


def build_linear_manifold(basis: ModalBasis, derivs: ModalDerivativeSet | None = None,
                          selection: str | Sequence = "all",
                          rel_tol: float = DEFLATION_RTOL) -> LinearManifold:
    """VMs followed by the selected (S)MDs, deflated to an orthonormal basis.

    ``selection`` is ``"all"`` (every admissible pair of ``derivs``) or a
    list of 0-based ``(i, j)`` pairs; for SMDs only ``i <= j`` is accepted.
    Columns are scaled to unit length before deflation so the rank test is
    independent of the units of modes and derivatives.
    """
    cols = [basis.Phi[:, k] for k in range(basis.m)]
    labels = [f"VM{k}" for k in basis.mode_numbers] if basis.mode_numbers else \
        [f"VM{k + 1}" for k in range(basis.m)]
    if derivs is not None:
        pairs = derivs.pairs() if isinstance(selection, str) and selection == "all" \
            else [tuple(int(x) for x in p) for p in selection]
        for i, j in pairs:
            if not (0 <= i < derivs.m and 0 <= j < derivs.m):
                raise IndexError(f"pair ({i}, {j}) out of range for m={derivs.m}")
            if derivs.kind == "SMD" and i > j:
                raise ValueError(f"SMD pairs must satisfy i <= j, got ({i}, {j})")
            cols.append(derivs.tensor[:, i, j])
            labels.append(f"{derivs.kind}({i + 1},{j + 1})")
    elif not (isinstance(selection, str) and selection == "all"):
        raise ValueError("a selection needs a derivative set")
    A = np.column_stack(cols)
    norms = np.linalg.norm(A, axis=0)
    keep = norms > 0
    if not np.any(keep):
        raise ValueError("empty basis")
    A = A[:, keep] / norms[keep]
    return LinearManifold(deflate_basis(A, rel_tol), tuple(labels))


@dataclass(frozen=True)
class QuadraticManifold:
    """``Gamma(q) = Phi q + 1/2 (Theta . q) . q`` with ``Theta`` symmetric.

    ``Omega`` keeps the raw derivative tensor the manifold was built from;
    only ``Theta`` enters the mapping.
    """

    Phi: np.ndarray
    Theta: np.ndarray
    Omega: np.ndarray | None = None
    kind: str = "SMD"

    @property
    def m(self) -> int:
        return self.Phi.shape[1]

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    def map(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self.Phi @ q + 0.5 * contract_t3(self.Theta, q, q)

    def tangent(self, q) -> np.ndarray:
        return self.Phi + contract_t3_once(self.Theta, np.asarray(q, dtype=float))

    def kinematics(self, q, qd, qdd):
        """Displacement, velocity and acceleration on the manifold."""
        P = self.tangent(q)
        return self.map(q), P @ qd, P @ qdd + contract_t3(self.Theta, qd, qd)


def build_quadratic_manifold(basis: ModalBasis, derivs: ModalDerivativeSet) -> QuadraticManifold:
    """Fill ``Omega[:, i, j]`` with the (S)MDs and keep its symmetric part."""
    if derivs.tensor.shape != (basis.n, basis.m, basis.m):
        raise ValueError(
            f"derivative tensor {derivs.tensor.shape} does not match basis {basis.Phi.shape}")
    missing = [(i, j) for i in range(basis.m) for j in range(basis.m)
               if not derivs.computed[i, j] and not (derivs.kind == "SMD" and derivs.computed[j, i])]
    if missing:
        raise ValueError(f"missing derivative pairs {missing}")
    Omega = derivs.tensor
    Theta, _ = symmetrize3(Omega)
    return QuadraticManifold(basis.Phi, Theta, Omega, derivs.kind)


def qm_map(qm: QuadraticManifold, q) -> np.ndarray:
    return qm.map(q)


def qm_tangent(qm: QuadraticManifold, q) -> np.ndarray:
    return qm.tangent(q)


def qm_kinematics(qm: QuadraticManifold, q, qd, qdd):
    return qm.kinematics(q, qd, qdd)


# ---------------------------------------------------------------------------
# selection heuristics


@dataclass(frozen=True)
class WeightMatrix:
    """Nonnegative ``W[i, j]`` ranking derivative ``(i, j)``; ``technique`` is MMI or MVW."""

    W: np.ndarray
    technique: str

    @property
    def symmetric(self) -> bool:
        return self.technique == "MMI"

    def normalized(self) -> np.ndarray:
        top = self.W.max()
        return self.W / top if top > 0 else self.W.copy()


def mmi_weights(hist: ModalAmplitudeHistory) -> WeightMatrix:
    """Maximum modal interaction: ``W_ij`` = time integral of ``|eta_i eta_j|``."""
    eta = np.asarray(hist.eta, dtype=float)
    if eta.size == 0 or eta.shape[0] < 2:
        raise ValueError("empty modal amplitude history")
    t = np.asarray(hist.times, dtype=float)
    prod = np.abs(eta[:, :, None] * eta[:, None, :])
    return WeightMatrix(np.trapezoid(prod, t, axis=0), "MMI")


def mvw_weights(hist: ModalAmplitudeHistory, model: StructuralModel,
                basis: ModalBasis) -> WeightMatrix:
    """Modal virtual work: ``W_ij = |phi_j^T f(eta_i(t_i^max) phi_i)|``."""
    eta = np.asarray(hist.eta, dtype=float)
    if eta.size == 0:
        raise ValueError("empty modal amplitude history")
    m = basis.m
    W = np.zeros((m, m))
    for i in range(m):
        k = int(np.argmax(np.abs(eta[:, i])))
        f = model.internal_force(eta[k, i] * basis.Phi[:, i])
        W[i, :] = np.abs(basis.Phi.T @ f)
    return WeightMatrix(W, "MVW")


def select_top_k(W: WeightMatrix, k: int):
    """The ``k`` largest-weight pairs, ties broken by lexicographic ``(i, j)``.

    Symmetric (MMI) weights rank the upper triangle including the
    diagonal; MVW weights rank every entry. Returns ``(pairs, weights)``
    with weights normalized to a maximum of 1.
    """
    m = W.W.shape[0]
    if W.symmetric:
        pairs = [(i, j) for i in range(m) for j in range(i, m)]
    else:
        pairs = [(i, j) for i in range(m) for j in range(m)]
    if not 0 <= k <= len(pairs):
        raise ValueError(f"cannot select {k} of {len(pairs)} admissible pairs")
    Wn = W.normalized()
    ranked = sorted(pairs, key=lambda p: (-Wn[p], p))[:k]
    return ranked, [float(Wn[p]) for p in ranked]


# ---------------------------------------------------------------------------
# POD


def pod_basis(snapshots, k: int, mass=None, rank_tol: float = 1e-12) -> LinearManifold:
    """First ``k`` left singular vectors of an ``n x s`` snapshot matrix.

    With ``mass`` given, the SVD is taken in the ``M``-inner product and the
    returned columns are ``M``-orthonormal instead of orthonormal.
    """
    X = np.asarray(snapshots, dtype=float)
    if X.ndim != 2 or not 1 <= k <= X.shape[1]:
        raise ValueError(f"need 1 <= k <= number of snapshots, got k={k}, shape {X.shape}")
    if mass is not None:
        L = la.cholesky(np.asarray(mass, dtype=float), lower=True)
        U, s, _ = la.svd(L.T @ X, full_matrices=False)
    else:
        U, s, _ = la.svd(X, full_matrices=False)
    rank = int(np.count_nonzero(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    if k > rank:
        raise ValueError(f"k={k} exceeds the snapshot rank {rank}")
    U = U[:, :k]
    if mass is not None:
        U = la.solve_triangular(L.T, U, lower=False)
    return LinearManifold(U, tuple(f"POD{i + 1}" for i in range(k)))
