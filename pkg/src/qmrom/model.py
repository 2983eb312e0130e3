"""Structural models: internal force, tangent stiffness and loads.

Every model works on its *free* DOFs only; constrained DOFs are removed at
construction. ``internal_force(u)`` returns ``f(u)`` with ``f(0) = 0`` and
``tangent_stiffness(u)`` its Jacobian.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as la

from .algebra import sym_generalized_eig
from .errors import ConfigError

__all__ = [
    "StructuralModel",
    "LinearModel",
    "CustomModel",
    "TwoDofParams",
    "TwoDofModel",
    "two_dof_model",
    "BeamModelSpec",
    "VonKarmanBeam",
    "von_karman_beam",
    "linearized",
    "stiffness_directional_derivative",
    "fd_stiffness_directional_derivative",
    "rayleigh_damping",
    "rayleigh_coefficients",
    "LoadCase",
    "load_amplitude",
    "assemble_load",
    "build_model",
    "build_load",
]


class StructuralModel:
    """Base class for ``M u'' + C u' + f(u) = g(t)`` on the free DOFs.

    Subclasses implement :meth:`internal_force` and :meth:`tangent_stiffness`
    and may override :meth:`stiffness_directional_derivative` with an
    analytic expression; the default falls back to central differences.
    """

    name = "model"

    def __init__(self, M, C=None, dof_labels=None):
        self._M = np.array(M, dtype=float)
        n = self._M.shape[0]
        self._C = np.zeros((n, n)) if C is None else np.array(C, dtype=float)
        self.dof_labels = list(dof_labels) if dof_labels is not None else [str(i) for i in range(n)]
        self._K0 = None

    @property
    def n(self) -> int:
        return self._M.shape[0]

    @property
    def M(self) -> np.ndarray:
        return self._M

    @property
    def C(self) -> np.ndarray:
        return self._C

    def mass_matrix(self) -> np.ndarray:
        return self._M

    def damping_matrix(self) -> np.ndarray:
        return self._C

    @property
    def K0(self) -> np.ndarray:
        """Tangent stiffness at the equilibrium ``u = 0``."""
        if self._K0 is None:
            self._K0 = self.tangent_stiffness(np.zeros(self.n))
        return self._K0

    @property
    def u_eq(self) -> np.ndarray:
        return np.zeros(self.n)

    def internal_force(self, u) -> np.ndarray:
        raise NotImplementedError

    def tangent_stiffness(self, u) -> np.ndarray:
        raise NotImplementedError

    def stiffness_directional_derivative(self, phi) -> np.ndarray:
        return fd_stiffness_directional_derivative(self, phi)

    def with_damping(self, C) -> "StructuralModel":
        """Copy of the model with damping matrix ``C``."""
        other = copy.copy(self)
        other._C = np.array(C, dtype=float)
        return other

    @property
    def length_scale(self) -> float:
        """Typical displacement magnitude, used to size finite-difference steps."""
        return 1.0


class LinearModel(StructuralModel):
    """``f(u) = K u`` with constant ``K``."""

    name = "linear"

    def __init__(self, K, M, C=None, dof_labels=None, length_scale=1.0):
        super().__init__(M, C, dof_labels)
        self._K = np.array(K, dtype=float)
        self._K0 = self._K
        self._length_scale = length_scale

    def internal_force(self, u):
        return self._K @ np.asarray(u, dtype=float)

    def tangent_stiffness(self, u):
        return self._K

    def stiffness_directional_derivative(self, phi):
        return np.zeros_like(self._K)

    @property
    def length_scale(self):
        return self._length_scale


class CustomModel(StructuralModel):
    """Model defined by user callables; stiffness and its derivative by differences."""

    name = "custom"

    def __init__(self, M, force: Callable, stiffness: Callable | None = None, C=None,
                 dof_labels=None, length_scale=1.0):
        super().__init__(M, C, dof_labels)
        self._force = force
        self._stiffness = stiffness
        self._length_scale = length_scale

    def internal_force(self, u):
        return np.asarray(self._force(np.asarray(u, dtype=float)), dtype=float)

    def tangent_stiffness(self, u):
        u = np.asarray(u, dtype=float)
        if self._stiffness is not None:
            return np.asarray(self._stiffness(u), dtype=float)
        h = 1e-6 * self._length_scale
        K = np.empty((self.n, self.n))
        for k in range(self.n):
            e = np.zeros(self.n)
            e[k] = h
            K[:, k] = (self.internal_force(u + e) - self.internal_force(u - e)) / (2 * h)
        return K

    @property
    def length_scale(self):
        return self._length_scale


def linearized(model: StructuralModel) -> LinearModel:
    """Linear model sharing ``M``, ``C`` and ``K(0)`` with ``model``."""
    return LinearModel(model.K0, model.M, model.C, model.dof_labels, model.length_scale)


def fd_stiffness_directional_derivative(model: StructuralModel, phi, h=None) -> np.ndarray:
    """Central difference ``(K(h phi) - K(-h phi)) / 2h``.

    The default step is ``1e-5`` times the model length scale divided by
    ``|phi|_inf``, so the probed displacement is small in physical units.
    """
    phi = np.asarray(phi, dtype=float)
    if h is None:
        h = 1e-5 * model.length_scale / max(np.abs(phi).max(), np.finfo(float).tiny)
    return (model.tangent_stiffness(h * phi) - model.tangent_stiffness(-h * phi)) / (2.0 * h)


def stiffness_directional_derivative(model: StructuralModel, phi, method: str = "analytic"):
    """``dK(u = eta phi)/d eta`` at ``eta = 0``.

    ``method="analytic"`` uses the model's own expression when it has one;
    ``method="fd"`` forces the finite-difference fallback.
    """
    phi = np.asarray(phi, dtype=float)
    if method == "analytic":
        return model.stiffness_directional_derivative(phi)
    if method == "fd":
        return fd_stiffness_directional_derivative(model, phi)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# two-DOF oscillator


@dataclass(frozen=True)
class TwoDofParams:
    """Parameters of the transverse/axial 2-DOF oscillator.

    ``c1, c2`` are damping coefficients; ``a, b, c`` are the nonlinear
    coupling coefficients (``a v w``, ``b w^3`` and ``c w^2``).
    """

    m1: float = 1.0
    m2: float = 1.0
    c1: float = 0.0
    c2: float = 0.0
    k1: float = 1.0
    k2: float = 1.0
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        for name in ("m1", "m2", "k1", "k2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")


class TwoDofModel(StructuralModel):
    """``f = [k1 w + a v w + b w^3, k2 v + c w^2]`` in ``u = [w, v]``."""

    name = "two_dof"

    def __init__(self, params: TwoDofParams):
        p = params
        super().__init__(np.diag([p.m1, p.m2]), np.diag([p.c1, p.c2]), ["w", "v"])
        self.params = p

    def internal_force(self, u):
        p = self.params
        w, v = u
        return np.array([p.k1 * w + p.a * v * w + p.b * w**3, p.k2 * v + p.c * w**2])

    def tangent_stiffness(self, u):
        # exact Jacobian; includes the a*v term in entry (0, 0)
        p = self.params
        w, v = u
        return np.array([[p.k1 + 3 * p.b * w**2 + p.a * v, p.a * w],
                         [2 * p.c * w, p.k2]])

    def stiffness_directional_derivative(self, phi):
        p = self.params
        p1, p2 = phi
        return np.array([[p.a * p2, p.a * p1], [2 * p.c * p1, 0.0]])


def two_dof_model(params: TwoDofParams | None = None, **kwargs) -> TwoDofModel:
    return TwoDofModel(params if params is not None else TwoDofParams(**kwargs))


# ---------------------------------------------------------------------------
# von Karman beam

_BC_PRESETS = {
    "simply_supported": {0: "uw", -1: "uw"},
    "clamped_free": {0: "uwt"},
    "clamped_clamped": {0: "uwt", -1: "uwt"},
    "pinned_roller": {0: "uw", -1: "w"},
}
_LOCAL = {"u": 0, "w": 1, "t": 2}


@dataclass(frozen=True)
class BeamModelSpec:
    """Geometry, material and supports of a straight beam/plate strip (SI units).

    ``boundary_conditions`` is a preset name (``"simply_supported"``,
    ``"clamped_free"``, ``"clamped_clamped"``, ``"pinned_roller"``) or a
    mapping ``{node: "uwt"}`` naming the constrained DOFs of each node;
    negative node indices count from the tip.
    """

    n_elements: int = 20
    length: float = 0.04
    width: float = 0.02
    thickness: float = 0.8e-3
    young_modulus: float = 70e9
    poisson_ratio: float = 0.33
    density: float = 2700.0
    boundary_conditions: str | Mapping = "simply_supported"

    def __post_init__(self):
        if self.n_elements < 2:
            raise ConfigError("n_elements must be >= 2")
        for name in ("length", "width", "thickness", "young_modulus", "density"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ConfigError("poisson_ratio must lie in [0, 0.5)")

    def constrained_dofs(self) -> list[int]:
        bc = self.boundary_conditions
        if isinstance(bc, str):
            if bc not in _BC_PRESETS:
                raise ConfigError(f"unknown boundary condition preset {bc!r}")
            bc = _BC_PRESETS[bc]
        n_nodes = self.n_elements + 1
        fixed = set()
        for node, flags in bc.items():
            node = int(node)
            node = node + n_nodes if node < 0 else node
            if not 0 <= node < n_nodes:
                raise ConfigError(f"boundary condition on missing node {node}")
            for flag in flags:
                if flag not in _LOCAL:
                    raise ConfigError(f"unknown DOF flag {flag!r} (use u, w, t)")
                fixed.add(3 * node + _LOCAL[flag])
        if not fixed:
            raise ConfigError("at least one DOF must be constrained")
        return sorted(fixed)


def _hermite(xi, le):
    """Values, slopes and curvatures of the axial and Hermite shape functions."""
    dNu = np.array([-1.0, 1.0]) / le
    dH = np.array([(-6 * xi + 6 * xi**2) / le, 1 - 4 * xi + 3 * xi**2,
                   (6 * xi - 6 * xi**2) / le, -2 * xi + 3 * xi**2])
    ddH = np.array([(-6 + 12 * xi) / le**2, (-4 + 6 * xi) / le,
                    (6 - 12 * xi) / le**2, (-2 + 6 * xi) / le])
    return dNu, dH, ddH


class VonKarmanBeam(StructuralModel):
    """Two-node beam elements with von Karman axial strain ``u' + (w')^2 / 2``.

    Nodes carry ``(u, w, theta)``. Axial displacement is linear and the
    transverse one cubic Hermite per element. The strain energy is
    integrated with two Gauss points per element, and the gradient
    operators at all Gauss points are stored once at assembly, so ``f``,
    ``K`` and ``dK/d eta`` are exact derivatives of one discrete energy.
    The plate-strip modulus ``E / (1 - nu^2)`` is used for both membrane
    and bending stiffness.
    """

    name = "vk_beam"

    def __init__(self, spec: BeamModelSpec):
        self.spec = spec
        ne = spec.n_elements
        le = spec.length / ne
        n_full = 3 * (ne + 1)
        E = spec.young_modulus / (1.0 - spec.poisson_ratio**2)
        A = spec.width * spec.thickness
        I = spec.width * spec.thickness**3 / 12.0
        rhoA = spec.density * A

        gp = 0.5 + np.array([-1.0, 1.0]) / (2.0 * np.sqrt(3.0))
        npts = 2 * ne
        Bu = np.zeros((npts, n_full))
        G = np.zeros((npts, n_full))
        Bb = np.zeros((npts, n_full))
        wq = np.full(npts, 0.5 * le)
        M = np.zeros((n_full, n_full))
        me_u = rhoA * le / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        me_w = rhoA * le / 420.0 * np.array([
            [156.0, 22 * le, 54.0, -13 * le],
            [22 * le, 4 * le**2, 13 * le, -3 * le**2],
            [54.0, 13 * le, 156.0, -22 * le],
            [-13 * le, -3 * le**2, -22 * le, 4 * le**2]])
        for e in range(ne):
            iu = [3 * e, 3 * e + 3]
            iw = [3 * e + 1, 3 * e + 2, 3 * e + 4, 3 * e + 5]
            M[np.ix_(iu, iu)] += me_u
            M[np.ix_(iw, iw)] += me_w
            for g, xi in enumerate(gp):
                row = 2 * e + g
                dNu, dH, ddH = _hermite(xi, le)
                Bu[row, iu] = dNu
                G[row, iw] = dH
                Bb[row, iw] = ddH

        fixed = spec.constrained_dofs()
        free = np.setdiff1d(np.arange(n_full), fixed)
        self.n_full = n_full
        self.free_dofs = free
        self.element_length = le
        self._Bu = Bu[:, free]
        self._G = G[:, free]
        self._EAw = E * A * wq
        Bbf = Bb[:, free]
        self._Kb = Bbf.T @ ((E * I * wq)[:, None] * Bbf)
        self._Ka = self._Bu.T @ (self._EAw[:, None] * self._Bu)
        labels = [f"{d // 3}{'uwt'[d % 3]}" for d in free]
        super().__init__(M[np.ix_(free, free)], None, labels)
        self._K0 = self._Ka + self._Kb
        try:
            la.cholesky(self._K0)
        except la.LinAlgError as exc:
            raise ConfigError("beam is under-constrained: K(0) is singular") from exc
        self.EA, self.EI, self.rhoA = E * A, E * I, rhoA

    @property
    def length_scale(self):
        return self.spec.thickness

    def internal_force(self, u):
        u = np.asarray(u, dtype=float)
        a = self._Bu @ u
        s = self._G @ u
        N = self._EAw * (a + 0.5 * s * s)
        return self._Bu.T @ N + self._G.T @ (N * s) + self._Kb @ u

    def tangent_stiffness(self, u):
        u = np.asarray(u, dtype=float)
        a = self._Bu @ u
        s = self._G @ u
        N = self._EAw * (a + 0.5 * s * s)
        Bt = self._Bu + s[:, None] * self._G
        return Bt.T @ (self._EAw[:, None] * Bt) + self._G.T @ (N[:, None] * self._G) + self._Kb

    def stiffness_directional_derivative(self, phi):
        phi = np.asarray(phi, dtype=float)
        a1 = self._Bu @ phi
        s1 = self._G @ phi
        cross = self._Bu.T @ ((self._EAw * s1)[:, None] * self._G)
        return cross + cross.T + self._G.T @ ((self._EAw * a1)[:, None] * self._G)

    def uniform_transverse_load(self, pressure: float = 1.0) -> np.ndarray:
        """Consistent nodal forces of a uniform pressure over the beam width."""
        le = self.element_length
        q = pressure * self.spec.width
        g = np.zeros(self.n_full)
        for e in range(self.spec.n_elements):
            g[[3 * e + 1, 3 * e + 2, 3 * e + 4, 3 * e + 5]] += q * np.array(
                [le / 2, le**2 / 12, le / 2, -le**2 / 12])
        return g[self.free_dofs]

    def point_load(self, nodes: Sequence[int], direction: str = "w") -> np.ndarray:
        """Unit forces on DOF ``direction`` of each listed node."""
        g = np.zeros(self.n_full)
        n_nodes = self.spec.n_elements + 1
        for node in nodes:
            node = int(node) + n_nodes if int(node) < 0 else int(node)
            g[3 * node + _LOCAL[direction]] += 1.0
        g = g[self.free_dofs]
        if not np.any(g):
            raise ConfigError("point load applied only to constrained DOFs")
        return g

    def expand(self, u) -> np.ndarray:
        """Scatter free-DOF vectors (last axis) into the full nodal numbering."""
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape[:-1] + (self.n_full,))
        out[..., self.free_dofs] = u
        return out


def von_karman_beam(spec: BeamModelSpec | None = None, **kwargs) -> VonKarmanBeam:
    return VonKarmanBeam(spec if spec is not None else BeamModelSpec(**kwargs))


# ---------------------------------------------------------------------------
# damping and loads


def rayleigh_coefficients(zeta: float, omega1: float, omega2: float):
    """``(alpha, beta)`` with ``zeta = (alpha/omega + beta*omega) / 2`` at both frequencies."""
    if omega1 <= 0 or omega2 <= 0:
        raise ValueError("frequencies must be positive")
    if np.isclose(omega1, omega2, rtol=1e-12, atol=0.0):
        raise ValueError("Rayleigh fit needs two distinct frequencies")
    if zeta < 0:
        raise ValueError("damping ratio must be non-negative")
    alpha = 2.0 * zeta * omega1 * omega2 / (omega1 + omega2)
    beta = 2.0 * zeta / (omega1 + omega2)
    return alpha, beta


def rayleigh_damping(M, K, zeta: float, omega1: float, omega2: float) -> np.ndarray:
    alpha, beta = rayleigh_coefficients(zeta, omega1, omega2)
    return alpha * np.asarray(M, dtype=float) + beta * np.asarray(K, dtype=float)


LOAD_KINDS = ("quasi_periodic", "pulse", "custom_samples")


@dataclass(frozen=True)
class LoadCase:
    """External load ``g(t) = p(t) * spatial``.

    ``quasi_periodic``: ``p = amplitude * (sin(w t) + sin(pi w t))``.
    ``pulse``: ``p = amplitude * sin(w t)^2`` on ``[0, pi/w]``, zero after.
    ``custom_samples``: ``p`` linearly interpolated from ``samples = (t, p)``.
    """

    spatial: np.ndarray
    kind: str = "quasi_periodic"
    amplitude: float = 1.0
    omega: float = 1.0
    duration: float | None = None
    samples: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in LOAD_KINDS:
            raise ConfigError(f"unknown load kind {self.kind!r}")
        if self.kind != "custom_samples" and not self.omega > 0:
            raise ConfigError("load frequency must be positive")
        if self.kind == "custom_samples" and self.samples is None:
            raise ConfigError("custom_samples load needs samples=(times, values)")
        if not np.linalg.norm(self.spatial) > 0:
            raise ConfigError("spatial load vector is zero")

    def scaled(self, amplitude: float) -> "LoadCase":
        return LoadCase(self.spatial, self.kind, amplitude, self.omega, self.duration, self.samples)

    def __call__(self, t):
        return assemble_load(self, t)


def load_amplitude(load: LoadCase, t: float) -> float:
    if t < 0:
        raise ValueError("load evaluated at negative time")
    w = load.omega
    if load.kind == "quasi_periodic":
        return load.amplitude * (np.sin(w * t) + np.sin(np.pi * w * t))
    if load.kind == "pulse":
        return load.amplitude * np.sin(w * t) ** 2 if t <= np.pi / w else 0.0
    times, values = load.samples
    return load.amplitude * float(np.interp(t, times, values, right=0.0))


def assemble_load(load: LoadCase, t: float) -> np.ndarray:
    return load_amplitude(load, t) * np.asarray(load.spatial, dtype=float)


# ---------------------------------------------------------------------------
# configuration


def build_model(cfg: Mapping) -> StructuralModel:
    """Model (with damping) from the ``model``/``params``/``bc``/``damping`` config keys.

    The beam gets Rayleigh damping (default 0.4 % on modes 1 and 2); the
    2-DOF model only when a ``damping`` block is given.
    """
    kind = cfg.get("model")
    params = dict(cfg.get("params", {}))
    try:
        if kind == "two_dof":
            model = TwoDofModel(TwoDofParams(**params))
        elif kind == "vk_beam":
            if "bc" in cfg:
                params["boundary_conditions"] = cfg["bc"]
            model = VonKarmanBeam(BeamModelSpec(**params))
        else:
            raise ConfigError(f"unknown model {kind!r} (expected 'two_dof' or 'vk_beam')")
    except TypeError as exc:
        raise ConfigError(f"bad model parameters: {exc}") from exc
    # the 2-DOF model keeps its own c1, c2 unless damping is requested
    default = None if kind == "two_dof" else {"zeta": 0.004}
    damping = cfg.get("damping", default)
    if damping:
        zeta = float(damping.get("zeta", 0.004))
        i, j = damping.get("modes", [1, 2])
        eig = sym_generalized_eig(model.K0, model.M, max(i, j))
        w = np.sqrt(eig.values)
        model = model.with_damping(rayleigh_damping(model.M, model.K0, zeta, w[i - 1], w[j - 1]))
    return model


def build_load(cfg: Mapping, model: StructuralModel) -> LoadCase:
    """Load case from the ``load`` config block.

    ``omega_mode`` is ``"first_eig"``, ``"mean_first_two"`` or a number
    (rad/s); ``spatial`` is ``"uniform_transverse"``, a node list (beam) or
    an explicit vector.
    """
    lc = cfg.get("load")
    if lc is None:
        raise ConfigError("config has no 'load' block")
    spatial = lc.get("spatial", "uniform_transverse")
    if isinstance(spatial, str):
        if spatial != "uniform_transverse":
            raise ConfigError(f"unknown spatial load {spatial!r}")
        if isinstance(model, VonKarmanBeam):
            vec = model.uniform_transverse_load()
        else:
            vec = np.zeros(model.n)
            vec[0] = 1.0
    elif isinstance(model, VonKarmanBeam) and all(isinstance(k, int) for k in spatial):
        vec = model.point_load(spatial)
    else:
        vec = np.asarray(spatial, dtype=float)
        if vec.shape != (model.n,):
            raise ConfigError(f"spatial load has {vec.size} entries, model has {model.n} DOFs")
    omega = lc.get("omega_mode", lc.get("omega", "first_eig"))
    if isinstance(omega, str):
        eig = sym_generalized_eig(model.K0, model.M, min(2, model.n))
        w = np.sqrt(eig.values)
        if omega == "first_eig":
            omega = w[0]
        elif omega == "mean_first_two":
            omega = 0.5 * (w[0] + w[1])
        else:
            raise ConfigError(f"unknown omega_mode {omega!r}")
    amplitude = lc.get("p0", lc.get("A", lc.get("amplitude", 1.0)))
    if isinstance(amplitude, str):
        amplitude = 1.0  # "auto": resolved by calibration
    samples = None
    if lc.get("kind") == "custom_samples":
        samples = (np.asarray(lc["times"], dtype=float), np.asarray(lc["values"], dtype=float))
    return LoadCase(vec, lc.get("kind", "quasi_periodic"), float(amplitude), float(omega),
                    lc.get("duration"), samples)
