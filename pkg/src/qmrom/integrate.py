"""Implicit Newmark integration with Newton-Raphson corrections.

Three drivers share one time-marching loop: the full model, Galerkin
projection on a linear basis, and projection on the tangent space of a
quadratic manifold. Every driver returns a :class:`Trajectory` whose
``u``/``v``/``a`` arrays are lifted back to the full DOFs.
"""

from __future__ import annotations

import time as _time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .algebra import contract_t3
from .errors import ConvergenceError, SingularMatrixError
from .manifold import LinearManifold, QuadraticManifold
from .model import LoadCase, StructuralModel

__all__ = [
    "IntegratorParams",
    "Trajectory",
    "newmark_full",
    "newmark_reduced_linear",
    "newmark_reduced_qm",
    "qm_reduced_residual",
]


@dataclass(frozen=True)
class IntegratorParams:
    """Newmark parameters; defaults are the average-acceleration rule.

    ``epsilon`` is the relative residual tolerance of the Newton loop.
    """

    h: float
    t_max: float
    beta: float = 0.25
    gamma: float = 0.5
    epsilon: float = 1e-6
    max_iterations: int = 25

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("time step must be positive")
        if not 0 < self.beta <= 0.5:
            raise ValueError("beta must lie in (0, 0.5]")
        if not 0.5 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0.5, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def from_steps(cls, t_max: float, n_steps: int = 400, **kwargs) -> "IntegratorParams":
        return cls(h=t_max / n_steps, t_max=t_max, **kwargs)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.h))


@dataclass
class Trajectory:
    """Time history on a uniform grid.

    ``q``, ``qd``, ``qdd`` are the integrated (possibly reduced) unknowns;
    ``u``, ``v``, ``a`` the corresponding full-order displacements,
    velocities and accelerations. ``iterations[k]`` and ``residuals[k]``
    are the Newton count and final residual norm of step ``k`` (zero at
    ``k = 0``).
    """

    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    u: np.ndarray
    v: np.ndarray
    a: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    technique: str = "full"
    wall_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_unknowns(self) -> int:
        return self.q.shape[1]

    def stats(self) -> dict:
        it = self.iterations[1:]
        return {
            "steps": int(it.size),
            "newton_total": int(it.sum()),
            "newton_mean": float(it.mean()) if it.size else 0.0,
            "newton_max": int(it.max()) if it.size else 0,
            "max_residual": float(self.residuals.max()) if self.residuals.size else 0.0,
        }


# ---------------------------------------------------------------------------
# residual systems


def _load(load, t, n):
    if load is None:
        return np.zeros(n)
    return load(t)


class _FullSystem:
    def __init__(self, model: StructuralModel, load):
        self.model, self.load = model, load
        self.size = model.n

    def residual(self, q, qd, qdd, t):
        m = self.model
        f = m.internal_force(q)
        g = _load(self.load, t, m.n)
        Mq, Cq = m.M @ qdd, m.C @ qd
        self._q = q
        r = Mq + Cq + f - g
        ref = max(np.linalg.norm(f), np.linalg.norm(g), np.linalg.norm(Mq), np.linalg.norm(Cq))
        return r, ref

    def mass(self):
        return self.model.M

    def rhs0(self, q, qd, t):
        m = self.model
        return _load(self.load, t, m.n) - m.internal_force(q) - m.C @ qd

    def jacobian(self, cm, cc):
        m = self.model
        return m.tangent_stiffness(self._q) + cc * m.C + cm * m.M

    def lift(self, q, qd, qdd):
        return q, qd, qdd


class _GalerkinSystem:
    def __init__(self, model: StructuralModel, V, load):
        self.model, self.V, self.load = model, V, load
        self.size = V.shape[1]
        self.Mr = V.T @ model.M @ V
        self.Cr = V.T @ model.C @ V

    def residual(self, q, qd, qdd, t):
        V, m = self.V, self.model
        u = V @ q
        f = V.T @ m.internal_force(u)
        g = V.T @ _load(self.load, t, m.n)
        Mq, Cq = self.Mr @ qdd, self.Cr @ qd
        self._u = u
        r = Mq + Cq + f - g
        ref = max(np.linalg.norm(f), np.linalg.norm(g), np.linalg.norm(Mq), np.linalg.norm(Cq))
        return r, ref

    def mass(self):
        return self.Mr

    def rhs0(self, q, qd, t):
        V, m = self.V, self.model
        return V.T @ _load(self.load, t, m.n) - V.T @ m.internal_force(V @ q) - self.Cr @ qd

    def jacobian(self, cm, cc):
        V = self.V
        return V.T @ self.model.tangent_stiffness(self._u) @ V + cc * self.Cr + cm * self.Mr

    def lift(self, q, qd, qdd):
        V = self.V
        return V @ q, V @ qd, V @ qdd


def qm_reduced_residual(model: StructuralModel, qm: QuadraticManifold, load, q, qd, qdd, t):
    """Reduced equation residual on the quadratic manifold.

    Returns ``(r, parts)`` with ``r = Mt qdd + p + Ct qd + ft - gt`` and
    ``parts`` a dict holding ``P``, ``u``, ``Mt``, ``Ct``, ``ft``, ``gt`` and
    the convective term ``p``.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    P = qm.tangent(q)
    u = qm.map(q)
    Mt = P.T @ model.M @ P
    Ct = P.T @ model.C @ P
    ft = P.T @ model.internal_force(u)
    gt = P.T @ _load(load, t, model.n)
    p = P.T @ (model.M @ contract_t3(qm.Theta, qd, qd))
    r = Mt @ qdd + p + Ct @ qd + ft - gt
    return r, {"P": P, "u": u, "Mt": Mt, "Ct": Ct, "ft": ft, "gt": gt, "p": p}


class _QMSystem:
    def __init__(self, model: StructuralModel, qm: QuadraticManifold, load):
        self.model, self.qm, self.load = model, qm, load
        self.size = qm.m

    def residual(self, q, qd, qdd, t):
        r, parts = qm_reduced_residual(self.model, self.qm, self.load, q, qd, qdd, t)
        self._parts = parts
        ref = max(np.linalg.norm(parts["ft"]), np.linalg.norm(parts["gt"]),
                  np.linalg.norm(parts["Mt"] @ qdd), np.linalg.norm(parts["Ct"] @ qd))
        return r, ref

    def mass(self):
        P = self.qm.tangent(self._q0)
        return P.T @ self.model.M @ P

    def rhs0(self, q, qd, t):
        self._q0 = q
        r, parts = qm_reduced_residual(self.model, self.qm, self.load, q, qd, np.zeros_like(q), t)
        return -r

    def jacobian(self, cm, cc):
        # approximate Jacobian: derivatives of P with respect to q are dropped
        pt = self._parts
        P = pt["P"]
        return P.T @ self.model.tangent_stiffness(pt["u"]) @ P + cc * pt["Ct"] + cm * pt["Mt"]

    def lift(self, q, qd, qdd):
        return self.qm.kinematics(q, qd, qdd)


# ---------------------------------------------------------------------------
# time marching


def _solve(S, r, what, step):
    try:
        with warnings.catch_warnings():
            # exact singularity is reported by the pivot test below
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu, piv = la.lu_factor(S, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise SingularMatrixError(f"{what} could not be factorized at step {step}") from exc
    d = np.abs(np.diag(lu))
    if d.max() == 0.0 or d.min() <= 1e-15 * d.max():
        raise SingularMatrixError(f"{what} is singular at step {step}")
    return la.lu_solve((lu, piv), r)


def _march(system, q0, qd0, params: IntegratorParams, technique: str) -> Trajectory:
    n_steps = params.n_steps
    h, beta, gamma = params.h, params.beta, params.gamma
    cm, cc = 1.0 / (beta * h * h), gamma / (beta * h)
    size = system.size

    q = np.zeros(size) if q0 is None else np.array(q0, dtype=float)
    qd = np.zeros(size) if qd0 is None else np.array(qd0, dtype=float)
    rhs = system.rhs0(q, qd, 0.0)
    qdd = _solve(system.mass(), rhs, "mass matrix", 0) if np.any(rhs) else np.zeros(size)

    Q = np.empty((n_steps + 1, size))
    QD = np.empty_like(Q)
    QDD = np.empty_like(Q)
    iters = np.zeros(n_steps + 1, dtype=int)
    res = np.zeros(n_steps + 1)
    Q[0], QD[0], QDD[0] = q, qd, qdd
    times = h * np.arange(n_steps + 1)

    start = _time.perf_counter()
    for k in range(1, n_steps + 1):
        t = times[k]
        q = q + h * qd + (0.5 - beta) * h * h * qdd
        qd = qd + (1.0 - gamma) * h * qdd
        qdd = np.zeros(size)
        it = 0
        while True:
            r, ref = system.residual(q, qd, qdd, t)
            rn = np.linalg.norm(r)
            if rn <= params.epsilon * ref:
                break
            if it >= params.max_iterations:
                raise ConvergenceError(
                    f"Newton-Raphson did not converge at step {k} (t={t:.6g}): "
                    f"|r|={rn:.3e}, tolerance {params.epsilon * ref:.3e}", step=k, residual=rn)
            dq = -_solve(system.jacobian(cm, cc), r, "iteration matrix", k)
            q = q + dq
            qd = qd + cc * dq
            qdd = qdd + cm * dq
            it += 1
            if np.linalg.norm(dq) <= 8 * np.finfo(float).eps * np.linalg.norm(q):
                # increment at round-off level: residual cannot shrink further
                r, ref = system.residual(q, qd, qdd, t)
                rn = np.linalg.norm(r)
                break
        Q[k], QD[k], QDD[k] = q, qd, qdd
        iters[k], res[k] = it, rn
    wall = _time.perf_counter() - start

    lifted = [system.lift(Q[k], QD[k], QDD[k]) for k in range(n_steps + 1)]
    U = np.array([x[0] for x in lifted])
    Vv = np.array([x[1] for x in lifted])
    A = np.array([x[2] for x in lifted])
    return Trajectory(times, Q, QD, QDD, U, Vv, A, iters, res, technique, wall)


def newmark_full(model: StructuralModel, load: LoadCase | None, ic, params: IntegratorParams,
                 technique: str = "full") -> Trajectory:
    """Integrate the full equations ``M u'' + C u' + f(u) = g(t)``.

    ``ic`` is ``None`` (rest) or a pair ``(u0, v0)``.
    """
    u0, v0 = (None, None) if ic is None else ic
    return _march(_FullSystem(model, load), u0, v0, params, technique)


def newmark_reduced_linear(model: StructuralModel, V, load: LoadCase | None, ic,
                           params: IntegratorParams, technique: str = "lm") -> Trajectory:
    """Galerkin ROM on ``u = V q``.

    ``V`` is a :class:`LinearManifold` or a plain full-column-rank array;
    ``ic`` gives reduced initial conditions ``(q0, qd0)`` or ``None``.
    """
    basis = V.V if isinstance(V, LinearManifold) else np.asarray(V, dtype=float)
    q0, qd0 = (None, None) if ic is None else ic
    traj = _march(_GalerkinSystem(model, basis, load), q0, qd0, params, technique)
    if isinstance(V, LinearManifold):
        traj.meta["nominal_unknowns"] = V.nominal_size
    return traj


def newmark_reduced_qm(model: StructuralModel, qm: QuadraticManifold, load: LoadCase | None,
                       ic, params: IntegratorParams, technique: str = "qm") -> Trajectory:
    """ROM on the quadratic manifold, projected on its tangent space.

    Reduced mass, damping, forces and the convective term are reassembled
    at every Newton iteration.
    """
    q0, qd0 = (None, None) if ic is None else ic
    return _march(_QMSystem(model, qm, load), q0, qd0, params, technique)
