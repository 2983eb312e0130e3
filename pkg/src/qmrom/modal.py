"""Vibration modes, modal derivatives and linear modal-superposition runs.

Mode and pair indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .algebra import solve_bordered, sym_generalized_eig
from .errors import SingularMatrixError
from .model import LinearModel, LoadCase, StructuralModel, stiffness_directional_derivative

__all__ = [
    "ModalBasis",
    "ModalDerivativeSet",
    "ModalAmplitudeHistory",
    "vibration_modes",
    "modal_derivative",
    "modal_derivatives",
    "static_modal_derivative",
    "static_modal_derivatives",
    "linear_modal_run",
    "REPEATED_EIG_RTOL",
]

REPEATED_EIG_RTOL = 1e-8


@dataclass(frozen=True)
class ModalBasis:
    """Mass-normalized vibration modes (columns of ``Phi``).

    ``mode_numbers`` holds the 1-based position of each retained mode in
    the ascending spectrum, e.g. ``(1, 3)`` when only symmetric modes of a
    beam are kept.
    """

    Phi: np.ndarray
    omega_sq: np.ndarray
    mode_numbers: tuple = ()

    @property
    def m(self) -> int:
        return self.Phi.shape[1]

    @property
    def n(self) -> int:
        return self.Phi.shape[0]

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.omega_sq)


@dataclass(frozen=True)
class ModalDerivativeSet:
    """Derivatives ``tensor[:, i, j] = d phi_i / d eta_j`` at equilibrium.

    ``kind`` is ``"MD"`` (bordered, mass-including solve) or ``"SMD"``
    (static). ``computed[i, j]`` flags which slices were actually solved;
    SMD slices with ``i > j`` are filled by symmetry unless computed.
    """

    kind: str
    tensor: np.ndarray
    computed: np.ndarray
    eigenvalue_sensitivities: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.tensor.shape[1]

    def pairs(self) -> list[tuple[int, int]]:
        """Admissible (i, j) pairs: upper triangle for SMDs, all for MDs."""
        m = self.m
        if self.kind == "SMD":
            return [(i, j) for i in range(m) for j in range(i, m)]
        return [(i, j) for i in range(m) for j in range(m)]

    def vector(self, i: int, j: int) -> np.ndarray:
        return self.tensor[:, i, j]

    def symmetry_residual(self) -> np.ndarray:
        """``|theta_ij - theta_ji| / max(|theta_ij|, 1)`` for every ordered pair."""
        T = self.tensor
        diff = np.linalg.norm(T - T.transpose(0, 2, 1), axis=0)
        return diff / np.maximum(np.linalg.norm(T, axis=0), 1.0)


@dataclass(frozen=True)
class ModalAmplitudeHistory:
    """Modal amplitudes ``eta[k, i]`` at ``times[k]`` from a linear run."""

    times: np.ndarray
    eta: np.ndarray
    velocities: np.ndarray | None = field(default=None, repr=False)


def vibration_modes(model: StructuralModel, m: int | None = None,
                    mode_numbers: Sequence[int] | None = None) -> ModalBasis:
    """Lowest ``m`` modes of ``(K(0), M)``, or the 1-based ``mode_numbers``."""
    if mode_numbers is None:
        if m is None:
            raise ValueError("give either m or mode_numbers")
        mode_numbers = tuple(range(1, m + 1))
    mode_numbers = tuple(int(k) for k in mode_numbers)
    if min(mode_numbers) < 1:
        raise ValueError("mode numbers are 1-based")
    top = max(mode_numbers)
    if top > model.n:
        raise ValueError(f"requested mode {top} but the model has {model.n} free DOFs")
    eig = sym_generalized_eig(model.K0, model.M, top)
    idx = [k - 1 for k in mode_numbers]
    return ModalBasis(eig.vectors[:, idx], eig.values[idx], mode_numbers)


def _check_simple(basis: ModalBasis, i: int):
    w = basis.omega_sq
    for k in range(basis.m):
        if k != i and abs(w[k] - w[i]) < REPEATED_EIG_RTOL * abs(w[i]):
            raise SingularMatrixError(
                f"eigenvalue of mode {i} is repeated (mode {k} within "
                f"{REPEATED_EIG_RTOL:g} relative); modal derivatives need simple modes")


def modal_derivative(model: StructuralModel, basis: ModalBasis, i: int, j: int,
                     dK=None, method: str = "analytic"):
    """Modal derivative ``d phi_i / d eta_j`` and ``d omega_i^2 / d eta_j``.

    Solves the bordered system built from ``K(0) - omega_i^2 M`` with the
    mass-normalization constraint ``phi_i^T M theta = 0``.
    """
    _check_simple(basis, i)
    phi_i = basis.Phi[:, i]
    if dK is None:
        dK = stiffness_directional_derivative(model, basis.Phi[:, j], method)
    A = model.K0 - basis.omega_sq[i] * model.M
    b = model.M @ phi_i
    theta, dlam = solve_bordered(A, b, -dK @ phi_i)
    return theta, dlam


def modal_derivatives(model: StructuralModel, basis: ModalBasis,
                      method: str = "analytic") -> ModalDerivativeSet:
    """All ``m^2`` modal derivatives (bordered solves)."""
    n, m = basis.Phi.shape
    T = np.zeros((n, m, m))
    sens = np.zeros((m, m))
    for j in range(m):
        dK = stiffness_directional_derivative(model, basis.Phi[:, j], method)
        for i in range(m):
            T[:, i, j], sens[i, j] = modal_derivative(model, basis, i, j, dK=dK)
    return ModalDerivativeSet("MD", T, np.ones((m, m), dtype=bool), sens)


def _factor_K0(model):
    with warnings.catch_warnings():
        # exact singularity is reported by the pivot test below
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(model.K0, check_finite=True)
    d = np.abs(np.diag(lu))
    if d.min() <= 1e-14 * d.max():
        raise SingularMatrixError("K(0) is singular; static modal derivatives undefined")
    return lu, piv


def _solve_K0(factor, rhs):
    return la.lu_solve(factor, rhs)


def static_modal_derivative(model: StructuralModel, basis: ModalBasis, i: int, j: int,
                            factor=None, dK=None, method: str = "analytic") -> np.ndarray:
    """Static modal derivative: ``K(0) theta = -(dK/d eta_j) phi_i``."""
    if factor is None:
        factor = _factor_K0(model)
    if dK is None:
        dK = stiffness_directional_derivative(model, basis.Phi[:, j], method)
    return _solve_K0(factor, -dK @ basis.Phi[:, i])


def static_modal_derivatives(model: StructuralModel, basis: ModalBasis,
                             method: str = "analytic", both_orders: bool = False
                             ) -> ModalDerivativeSet:
    """Static modal derivatives for all pairs, factorizing ``K(0)`` once.

    Only ``i <= j`` is solved and mirrored unless ``both_orders`` is set,
    in which case every ordered pair is solved independently (useful to
    check the symmetry numerically).
    """
    n, m = basis.Phi.shape
    factor = _factor_K0(model)
    dKs = [stiffness_directional_derivative(model, basis.Phi[:, j], method) for j in range(m)]
    T = np.zeros((n, m, m))
    computed = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            if i > j and not both_orders:
                continue
            T[:, i, j] = static_modal_derivative(model, basis, i, j, factor, dKs[j])
            computed[i, j] = True
    if not both_orders:
        for i in range(m):
            for j in range(i):
                T[:, i, j] = T[:, j, i]
    return ModalDerivativeSet("SMD", T, computed if both_orders else np.ones((m, m), bool))


def linear_modal_run(model: StructuralModel, basis: ModalBasis, load: LoadCase,
                     T: float, n_steps: int, zeta: float | None = 0.004,
                     beta: float = 0.25, gamma: float = 0.5) -> ModalAmplitudeHistory:
    """Decoupled modal equations ``eta'' + 2 zeta w eta' + w^2 eta = phi^T g(t)``.

    Integrated with the same Newmark scheme as the nonlinear runs, from
    rest. ``zeta=None`` takes the modal damping ``phi_i^T C phi_i / 2 w_i``
    from the model's damping matrix instead of a uniform ratio.
    """
    from .integrate import IntegratorParams, newmark_full

    w = basis.omega
    if zeta is None:
        c = np.einsum("ik,ij,jk->k", basis.Phi, model.C, basis.Phi)
    else:
        c = 2.0 * zeta * w
    modal = LinearModel(np.diag(basis.omega_sq), np.eye(basis.m), np.diag(c))
    modal_load = LoadCase(basis.Phi.T @ load.spatial, load.kind, load.amplitude,
                          load.omega, load.duration, load.samples) \
        if np.any(basis.Phi.T @ load.spatial) else None
    params = IntegratorParams(h=T / n_steps, t_max=T, beta=beta, gamma=gamma)
    traj = newmark_full(modal, modal_load, None, params)
    return ModalAmplitudeHistory(traj.times, traj.q, traj.qd)
