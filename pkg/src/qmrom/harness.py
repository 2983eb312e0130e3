"""Experiment driver: configuration, error metrics, calibration and reports."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, NumericalError
from .integrate import (IntegratorParams, Trajectory, newmark_full, newmark_reduced_linear,
                        newmark_reduced_qm)
from .manifold import (build_linear_manifold, build_quadratic_manifold, mmi_weights, mvw_weights,
                       pod_basis, select_top_k)
from .modal import linear_modal_run, modal_derivatives, static_modal_derivatives, vibration_modes
from .model import LoadCase, StructuralModel, build_load, build_model, linearized

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "ComparisonReport",
    "ForceBalance",
    "gre_metric",
    "force_balance_report",
    "calibrate_load",
    "run_experiment",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "nominal_unknowns",
    "normalize_technique",
    "technique_label",
]

CALIBRATION_BAND = (0.5, 2.0)
POD_SNAPSHOT_POLICY = "full-run displacements at every time step, no mean subtraction, Euclidean SVD"


# ---------------------------------------------------------------------------
# metrics


def _displacements(x):
    return x.u if isinstance(x, Trajectory) else np.asarray(x, dtype=float)


def gre_metric(full, reduced, M, S: Sequence[int] | None = None) -> float:
    """Mass-weighted global relative error, in percent.

    ``full`` and ``reduced`` are trajectories (or ``(n_times, n)`` arrays)
    on the same grid; ``S`` selects the time indices (default: all).
    """
    U = _displacements(full)
    Ur = _displacements(reduced)
    if U.shape != Ur.shape:
        raise ValueError(f"trajectory shapes differ: {U.shape} vs {Ur.shape}")
    if S is not None:
        S = list(S)
        if not S:
            raise ValueError("empty sample set")
        U, Ur = U[S], Ur[S]
    D = U - Ur
    num = np.einsum("ti,ij,tj->", D, M, D)
    den = np.einsum("ti,ij,tj->", U, M, U)
    if not den > 0:
        raise ValueError("reference trajectory is zero on the sample set")
    return 100.0 * float(np.sqrt(num / den))


@dataclass(frozen=True)
class ForceBalance:
    """Norms of the linear ``K(0) u`` and nonlinear ``f(u) - K(0) u`` forces per step."""

    linear: np.ndarray
    nonlinear: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        out = np.zeros_like(self.linear)
        nz = self.linear > 0
        out[nz] = self.nonlinear[nz] / self.linear[nz]
        return out

    @property
    def max_ratio(self) -> float:
        return float(self.ratio.max()) if self.linear.size else 0.0


def force_balance_report(model: StructuralModel, traj) -> ForceBalance:
    U = _displacements(traj)
    if U.size == 0:
        raise ValueError("empty trajectory")
    lin = U @ model.K0.T
    nl = np.array([model.internal_force(u) for u in U]) - lin
    return ForceBalance(np.linalg.norm(lin, axis=1), np.linalg.norm(nl, axis=1))


def _miss(r, target):
    return abs(np.log(r / target)) if 0 < r < np.inf else np.inf


def calibrate_load(model: StructuralModel, load: LoadCase, params: IntegratorParams,
                   target: float = 1.0, band=CALIBRATION_BAND, iterations: int = 14):
    """Scale the load amplitude until the peak force ratio is close to ``target``.

    The ratio is bracketed by repeated factor-4 steps from the current
    amplitude and then bisected in log-amplitude a fixed number of times,
    so the result is deterministic. Returns ``(load, max_ratio)``.
    """
    if not band[0] <= target <= band[1]:
        raise ValueError("calibration target outside the admissible band")

    def ratio(p):
        # a run that blows up counts as overshooting the target
        try:
            traj = newmark_full(model, load.scaled(p), None, params)
        except NumericalError:
            return np.inf
        return force_balance_report(model, traj).max_ratio

    p = abs(load.amplitude) or 1.0
    r = ratio(p)
    lo = hi = None
    for _ in range(40):
        if r < target:
            lo = p
            if hi is not None:
                break
            p *= 4.0
        else:
            hi = p
            if lo is not None:
                break
            p /= 4.0
        r = ratio(p)
        if r < target and hi is not None:
            lo = p
            break
        if r >= target and lo is not None:
            hi = p
            break
    if lo is None or hi is None:
        raise NumericalError("could not bracket the calibration target")
    best = (_miss(r, target), p, r)
    for _ in range(iterations):
        p = float(np.sqrt(lo * hi))
        r = ratio(p)
        best = min(best, (_miss(r, target), p, r))
        if r < target:
            lo = p
        else:
            hi = p
    _, p, r = best
    if not band[0] <= r <= band[1]:
        raise NumericalError(f"calibrated force ratio {r:.3f} outside {band}")
    return load.scaled(p), r


# ---------------------------------------------------------------------------
# configuration

_TECHNIQUE_ALIASES = {
    "qm_smd": {"name": "qm", "kind": "SMD"},
    "qm_md": {"name": "qm", "kind": "MD"},
    "lm_selected_mmi": {"name": "lm_selected", "heuristic": "MMI"},
    "lm_selected_mvw": {"name": "lm_selected", "heuristic": "MVW"},
}
_TECHNIQUES = ("full", "linearized", "lm_vm", "lm_all_smd", "lm_all_md", "lm_selected", "qm", "pod")


def normalize_technique(t) -> dict:
    if isinstance(t, str):
        if t in _TECHNIQUE_ALIASES:
            t = dict(_TECHNIQUE_ALIASES[t])
        elif t.startswith("pod") and t[3:].lstrip("_:").isdigit():
            t = {"name": "pod", "k": int(t[3:].lstrip("_:"))}
        else:
            t = {"name": t}
    t = dict(t)
    name = t.get("name")
    if name not in _TECHNIQUES:
        raise ConfigError(f"unknown technique {name!r}; expected one of {_TECHNIQUES}")
    if name == "qm":
        t.setdefault("kind", "SMD")
        if t["kind"] not in ("SMD", "MD"):
            raise ConfigError("qm kind must be SMD or MD")
    if name == "lm_selected":
        t.setdefault("heuristic", "MMI")
        if t["heuristic"] not in ("MMI", "MVW"):
            raise ConfigError("lm_selected heuristic must be MMI or MVW")
    return t


def technique_label(t: Mapping) -> str:
    name = t["name"]
    if name == "qm":
        return f"qm_{t['kind'].lower()}"
    if name == "lm_selected":
        k = t.get("k")
        return f"lm_selected_{t['heuristic'].lower()}" + (f"_k{k}" if k is not None else "")
    if name == "pod":
        return f"pod_k{t['k']}" if t.get("k") is not None else "pod"
    return name


@dataclass
class ExperimentConfig:
    """Parsed experiment description.

    ``model_cfg`` holds the model/load blocks understood by
    :func:`qmrom.model.build_model` and :func:`qmrom.model.build_load`.
    """

    model_cfg: dict
    techniques: list = field(default_factory=lambda: [{"name": "full"}])
    modes: tuple | None = None
    n_steps: int = 400
    t_max: float | None = None
    periods: float = 5.0
    beta: float = 0.25
    gamma: float = 0.5
    epsilon: float = 1e-6
    max_iterations: int = 25
    zeta_linear: float = 0.004
    sample_set: list | None = None
    calibrate: bool = False
    calibration_target: float = 1.0
    output: str | None = None
    seed: int | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        if "model" not in d:
            raise ConfigError("config needs a 'model' entry")
        model_cfg = {k: d[k] for k in ("model", "params", "bc", "damping", "load") if k in d}
        techniques = [normalize_technique(t) for t in d.get("techniques", ["full"])]
        if not techniques:
            raise ConfigError("at least one technique is required")
        if not any(t["name"] == "full" for t in techniques):
            techniques.insert(0, {"name": "full"})
        modes = d.get("modes", d.get("m"))
        if isinstance(modes, int):
            modes = tuple(range(1, modes + 1))
        elif modes is not None:
            modes = tuple(int(k) for k in modes)
        integ = dict(d.get("integrator", {}))
        load = d.get("load", {})
        p0 = load.get("p0", load.get("A", load.get("amplitude")))
        calib = d.get("calibrate", p0 == "auto")
        target = 1.0
        if isinstance(calib, Mapping):
            target = float(calib.get("target", 1.0))
            calib = True
        try:
            return cls(
                model_cfg=model_cfg,
                techniques=techniques,
                modes=modes,
                n_steps=int(integ.get("n_steps", d.get("steps", 400))),
                t_max=integ.get("t_max", load.get("duration")),
                periods=float(integ.get("periods", 5.0)),
                beta=float(integ.get("beta", 0.25)),
                gamma=float(integ.get("gamma", 0.5)),
                epsilon=float(integ.get("epsilon", 1e-6)),
                max_iterations=int(integ.get("max_iterations", 25)),
                zeta_linear=float(d.get("zeta_linear", 0.004)),
                sample_set=d.get("sample_set"),
                calibrate=bool(calib),
                calibration_target=target,
                output=d.get("output"),
                seed=d.get("seed"),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def build(self):
        """Model, load case, integrator parameters and modal basis."""
        model = build_model(self.model_cfg)
        load = build_load(self.model_cfg, model)
        t_max = self.t_max if self.t_max is not None else self.periods * 2 * np.pi / load.omega
        params = IntegratorParams(h=t_max / self.n_steps, t_max=t_max, beta=self.beta,
                                  gamma=self.gamma, epsilon=self.epsilon,
                                  max_iterations=self.max_iterations)
        modes = self.modes or (1,)
        if max(modes) > model.n:
            raise ConfigError(f"mode {max(modes)} requested, model has {model.n} DOFs")
        basis = vibration_modes(model, mode_numbers=modes)
        return model, load, params, basis


def nominal_unknowns(t: Mapping, n: int, m: int) -> int:
    """Reduced-problem size before deflation for technique ``t``."""
    name = t["name"]
    if name in ("full", "linearized"):
        return n
    if name == "lm_vm":
        return m
    if name == "lm_all_smd":
        return m + m * (m + 1) // 2
    if name == "lm_all_md":
        return m + m * m
    if name == "lm_selected":
        return m + int(t.get("k") or m)
    if name == "qm":
        return m
    if name == "pod":
        return int(t.get("k") or m)
    raise ConfigError(f"unknown technique {name!r}")


# ---------------------------------------------------------------------------
# report


@dataclass
class ComparisonReport:
    rows: list
    calibration: dict
    model: dict
    conventions: dict
    timing: dict = field(default_factory=dict)

    def row(self, label: str) -> dict:
        for r in self.rows:
            if r["technique"] == label:
                return r
        raise KeyError(label)

    def gre(self, label: str) -> float:
        return self.row(label)["gre"]

    @property
    def failed(self) -> list:
        return [r["technique"] for r in self.rows if r["status"] != "ok"]

    def to_dict(self) -> dict:
        return {"rows": self.rows, "calibration": self.calibration, "model": self.model,
                "conventions": self.conventions, "timing": self.timing}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        head = f"{'Reduction technique':<28}{'# unknowns':>12}{'(nominal)':>11}{'GRE_M (%)':>12}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            gre = "ref" if r["technique"] == "full" else (
                f"{r['gre']:.2f}" if r.get("gre") is not None else r["status"])
            lines.append(f"{r['technique']:<28}{r['unknowns'] if r['unknowns'] is not None else '-':>12}"
                         f"{r['unknowns_nominal']:>11}{gre:>12}")
        cal = self.calibration
        if cal:
            lines.append("")
            lines.append(f"load amplitude {cal['amplitude']:.6g}, max |f_nl|/|K u| = "
                         f"{cal['max_force_ratio']:.2f}")
        return "\n".join(lines) + "\n"


def write_trajectory_csv(path, times, values, labels):
    """CSV with header ``t,dof_<label>...``, ``%.17g`` numbers and LF endings."""
    data = np.column_stack([times, values])
    header = ",".join(["t"] + [f"dof_{lab}" for lab in labels])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in data:
            fh.write(",".join("%.17g" % x for x in row) + "\n")


def read_trajectory_csv(path):
    """Inverse of :func:`write_trajectory_csv`: ``(times, values, labels)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    labels = [h[4:] if h.startswith("dof_") else h for h in header[1:]]
    return data[:, 0], data[:, 1:], labels


def _write_run(outdir, label, traj: Trajectory, model: StructuralModel, params, extra):
    write_trajectory_csv(os.path.join(outdir, f"{label}.csv"), traj.times, traj.u, model.dof_labels)
    write_trajectory_csv(os.path.join(outdir, f"{label}_v.csv"), traj.times, traj.v, model.dof_labels)
    write_trajectory_csv(os.path.join(outdir, f"{label}_a.csv"), traj.times, traj.a, model.dof_labels)
    manifest = {
        "technique": label,
        "params": {"h": params.h, "t_max": params.t_max, "beta": params.beta,
                   "gamma": params.gamma, "epsilon": params.epsilon,
                   "max_iterations": params.max_iterations, "n_steps": params.n_steps},
        "unknowns": traj.n_unknowns,
        "convergence": traj.stats(),
        "timing": {"wall_time_s": traj.wall_time},
        **extra,
    }
    with open(os.path.join(outdir, f"{label}.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# experiment


class _Offline:
    """Lazily computed modal quantities shared by the techniques of one run."""

    def __init__(self, model, load, params, basis, zeta):
        self.model, self.load, self.params, self.basis, self.zeta = model, load, params, basis, zeta
        self._cache = {}

    def get(self, key):
        if key not in self._cache:
            self._cache[key] = getattr(self, f"_make_{key}")()
        return self._cache[key]

    def _make_smd(self):
        return static_modal_derivatives(self.model, self.basis)

    def _make_md(self):
        return modal_derivatives(self.model, self.basis)

    def _make_history(self):
        p = self.params
        return linear_modal_run(self.model, self.basis, self.load, p.t_max, p.n_steps,
                                zeta=self.zeta, beta=p.beta, gamma=p.gamma)


def _run_technique(t, model, load, params, basis, offline: _Offline, full: Trajectory):
    name = t["name"]
    extra = {}
    if name == "linearized":
        return newmark_full(linearized(model), load, None, params, "linearized"), extra
    if name == "qm":
        derivs = offline.get("smd" if t["kind"] == "SMD" else "md")
        qm = build_quadratic_manifold(basis, derivs)
        return newmark_reduced_qm(model, qm, load, None, params), extra
    if name == "lm_vm":
        lm = build_linear_manifold(basis)
    elif name == "lm_all_smd":
        lm = build_linear_manifold(basis, offline.get("smd"))
    elif name == "lm_all_md":
        lm = build_linear_manifold(basis, offline.get("md"))
    elif name == "lm_selected":
        hist = offline.get("history")
        k = int(t.get("k") or basis.m)
        if t["heuristic"] == "MMI":
            W, derivs = mmi_weights(hist), offline.get("smd")
        else:
            W, derivs = mvw_weights(hist, model, basis), offline.get("md")
        pairs, weights = select_top_k(W, k)
        lm = build_linear_manifold(basis, derivs, pairs)
        extra["selection"] = [{"pair": [i + 1, j + 1], "weight": w} for (i, j), w in zip(pairs, weights)]
    elif name == "pod":
        k = int(t.get("k") or basis.m)
        lm = pod_basis(full.u.T, k)
    else:
        raise ConfigError(f"unknown technique {name!r}")
    extra["provenance"] = list(lm.provenance)
    return newmark_reduced_linear(model, lm, load, None, params), extra


def run_experiment(cfg: ExperimentConfig) -> ComparisonReport:
    """Run the full reference once, then every requested technique against it.

    A technique that fails numerically is reported with ``status`` set to
    ``"failed"``; the others still run. Outputs are written when
    ``cfg.output`` is set.
    """
    model, load, params, basis = cfg.build()
    calibration = {}
    if cfg.calibrate:
        load, ratio = calibrate_load(model, load, params, cfg.calibration_target)
        log.info("calibrated load amplitude %.6g (force ratio %.3f)", load.amplitude, ratio)
    outdir = cfg.output
    if outdir:
        os.makedirs(outdir, exist_ok=True)

    n, m = model.n, basis.m
    t0 = time.perf_counter()
    full = newmark_full(model, load, None, params)
    timing = {"full": time.perf_counter() - t0}
    fb = force_balance_report(model, full)
    calibration = {"amplitude": load.amplitude, "max_force_ratio": fb.max_ratio,
                   "calibrated": cfg.calibrate, "band": list(CALIBRATION_BAND)}
    if outdir:
        _write_run(outdir, "full", full, model, params, {})

    offline = _Offline(model, load, params, basis, cfg.zeta_linear)
    rows = [{"technique": "full", "unknowns": n, "unknowns_nominal": n, "gre": 0.0,
             "status": "ok", "convergence": full.stats()}]
    seen = {"full"}
    for t in cfg.techniques:
        label = technique_label(t)
        if label in seen:
            continue
        seen.add(label)
        row = {"technique": label, "unknowns_nominal": nominal_unknowns(t, n, m)}
        t0 = time.perf_counter()
        try:
            traj, extra = _run_technique(t, model, load, params, basis, offline, full)
            row.update(unknowns=traj.n_unknowns, gre=gre_metric(full, traj, model.M, cfg.sample_set),
                       status="ok", convergence=traj.stats())
            if "selection" in extra:
                row["selection"] = extra["selection"]
            if outdir:
                _write_run(outdir, label, traj, model, params, extra)
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            log.warning("technique %s failed: %s", label, exc)
            row.update(unknowns=None, gre=None, status="failed", error=str(exc))
        timing[label] = time.perf_counter() - t0
        rows.append(row)

    report = ComparisonReport(
        rows=rows,
        calibration=calibration,
        model={"name": model.name, "n": n, "modes": list(basis.mode_numbers),
               "omega": [float(x) for x in basis.omega], "load_omega": load.omega,
               "t_max": params.t_max, "n_steps": params.n_steps},
        conventions={"pod_snapshots": POD_SNAPSHOT_POLICY,
                     "sample_set": "all steps" if cfg.sample_set is None else "custom",
                     "mode_numbering": "1-based"},
        timing=timing,
    )
    if outdir:
        with open(os.path.join(outdir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_json())
        with open(os.path.join(outdir, "report.txt"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_text())
    return report
