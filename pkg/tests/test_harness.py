import json

import numpy as np
import pytest

from qmrom.errors import ConfigError
from qmrom.harness import (ExperimentConfig, calibrate_load, force_balance_report, gre_metric,
                           nominal_unknowns, read_trajectory_csv, run_experiment,
                           write_trajectory_csv)
from qmrom.integrate import IntegratorParams, newmark_full, newmark_reduced_qm
from qmrom.manifold import build_quadratic_manifold
from qmrom.modal import static_modal_derivatives, vibration_modes
from qmrom.model import LinearModel, build_load, build_model

TWO_DOF = {
    "model": "two_dof",
    "params": {"k1": 1.0, "k2": 16.0, "a": 1.0, "b": 0.2, "c": 1.0},
    "modes": [1],
    "load": {"kind": "quasi_periodic", "p0": 0.1, "spatial": [1.0, 0.0], "omega_mode": "first_eig"},
    "integrator": {"n_steps": 200, "periods": 3},
}

SMALL_BEAM = {
    "model": "vk_beam",
    "params": {"n_elements": 8},
    "modes": 5,
    "load": {"kind": "quasi_periodic", "p0": 1000.0, "spatial": "uniform_transverse",
             "omega_mode": "first_eig"},
    "integrator": {"n_steps": 120, "periods": 2},
}


# -- GRE ------------------------------------------------------------------------

def test_gre_trivial_cases():
    rng = np.random.default_rng(0)
    U = rng.standard_normal((30, 4))
    M = np.diag([1.0, 2.0, 3.0, 4.0])
    assert gre_metric(U, U, M) == 0.0
    assert gre_metric(U, np.zeros_like(U), M) == pytest.approx(100.0, rel=1e-15)
    assert gre_metric(U, 1.01 * U, M) == pytest.approx(1.0, abs=1e-10)


def test_gre_errors():
    U = np.ones((5, 2))
    with pytest.raises(ValueError):
        gre_metric(np.zeros((5, 2)), U, np.eye(2))
    with pytest.raises(ValueError):
        gre_metric(U, np.ones((4, 2)), np.eye(2))
    with pytest.raises(ValueError):
        gre_metric(U, U, np.eye(2), S=[])


def test_gre_sample_set():
    U = np.array([[1.0], [2.0], [0.0]])
    R = np.array([[1.0], [1.0], [5.0]])
    assert gre_metric(U, R, np.eye(1), S=[0, 1]) == pytest.approx(100 / np.sqrt(5))


def test_gre_grid_refinement_invariance():
    # exact trajectories over one period: discrete sums of trig products are exact
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    vals = []
    for N in (16, 32, 64):
        t = 2 * np.pi * np.arange(N) / N
        U = np.column_stack([np.sin(t), np.cos(2 * t)])
        R = np.column_stack([np.sin(t) + 0.1 * np.cos(t), 0.9 * np.cos(2 * t)])
        vals.append(gre_metric(U, R, M))
    np.testing.assert_allclose(vals, vals[0], rtol=1e-12)


# -- force balance ---------------------------------------------------------------

def test_force_balance_linear_is_zero():
    mdl = LinearModel(np.diag([1.0, 2.0]), np.eye(2))
    fb = force_balance_report(mdl, np.random.default_rng(1).standard_normal((10, 2)))
    assert not fb.nonlinear.any()
    assert fb.max_ratio == 0.0


def test_force_balance_linear_in_amplitude():
    mdl = build_model({**TWO_DOF, "params": {"k2": 16.0, "a": 1.0, "b": 0.0, "c": 1.0}})
    u0 = np.array([[0.3, -0.1]])
    r = [force_balance_report(mdl, s * u0).max_ratio for s in (1e-3, 2e-3, 4e-3)]
    assert r[1] / r[0] == pytest.approx(2.0, rel=1e-2)
    assert r[2] / r[1] == pytest.approx(2.0, rel=1e-2)


def test_force_balance_empty():
    with pytest.raises(ValueError):
        force_balance_report(LinearModel(np.eye(1), np.eye(1)), np.zeros((0, 1)))


def test_calibration_lands_in_band():
    cfg = ExperimentConfig.from_dict(TWO_DOF)
    model, load, params, _ = cfg.build()
    scaled, ratio = calibrate_load(model, load, params, target=1.0)
    assert 0.5 <= ratio <= 2.0
    fb = force_balance_report(model, newmark_full(model, scaled, None, params))
    assert fb.max_ratio == pytest.approx(ratio, rel=1e-12)
    with pytest.raises(ValueError):
        calibrate_load(model, load, params, target=3.0)


# -- config ------------------------------------------------------------------------

def test_config_parsing_and_defaults():
    cfg = ExperimentConfig.from_dict({**TWO_DOF, "techniques": ["qm_smd", {"name": "pod", "k": 1}, "pod3"]})
    names = [t["name"] for t in cfg.techniques]
    assert names[0] == "full"
    assert cfg.techniques[1] == {"name": "qm", "kind": "SMD"}
    assert cfg.techniques[3] == {"name": "pod", "k": 3}
    assert cfg.n_steps == 200 and not cfg.calibrate
    auto = ExperimentConfig.from_dict({**TWO_DOF, "load": {**TWO_DOF["load"], "p0": "auto"}})
    assert auto.calibrate


@pytest.mark.parametrize("bad", [
    {"techniques": ["warp_drive"]},
    {"techniques": []},
    {"techniques": [{"name": "qm", "kind": "XMD"}]},
    {"techniques": [{"name": "lm_selected", "heuristic": "ABC"}]},
    {"integrator": {"n_steps": "many"}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TWO_DOF, **bad})


def test_config_missing_model_and_files(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"load": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "nope.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(p)


def test_config_mode_beyond_model():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**TWO_DOF, "modes": [3]}).build()


def test_nominal_counts():
    n, m = 59, 5
    assert nominal_unknowns({"name": "full"}, n, m) == n
    assert nominal_unknowns({"name": "lm_all_smd"}, n, m) == 20
    assert nominal_unknowns({"name": "lm_all_md"}, n, m) == 30
    assert nominal_unknowns({"name": "lm_selected", "k": 5}, n, m) == 10
    assert nominal_unknowns({"name": "qm"}, n, m) == 5
    assert nominal_unknowns({"name": "pod", "k": 7}, n, m) == 7


# -- CSV ---------------------------------------------------------------------------

def test_csv_round_trip_exact(tmp_path):
    rng = np.random.default_rng(2)
    t = np.linspace(0, 1, 7)
    X = rng.standard_normal((7, 3)) * 10.0 ** rng.integers(-12, 12, (7, 3))
    p = tmp_path / "x.csv"
    write_trajectory_csv(p, t, X, ["0w", "1t", "2u"])
    raw = p.read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[0] == b"t,dof_0w,dof_1t,dof_2u"
    t2, X2, labels = read_trajectory_csv(p)
    assert np.array_equal(t2, t) and np.array_equal(X2, X)
    assert labels == ["0w", "1t", "2u"]


# -- experiments -------------------------------------------------------------------

def test_reference_only_report():
    rep = run_experiment(ExperimentConfig.from_dict({**TWO_DOF, "techniques": ["full"]}))
    assert [r["technique"] for r in rep.rows] == ["full"]
    assert "ref" in rep.to_text()


def test_two_path_equivalence_two_dof():
    rep = run_experiment(ExperimentConfig.from_dict({**TWO_DOF, "techniques": ["full", "qm_smd"]}))
    row = rep.row("qm_smd")
    assert row["unknowns"] == 1 and row["unknowns_nominal"] == 1
    # independent path through the library modules
    model = build_model(TWO_DOF)
    load = build_load(TWO_DOF, model)
    T = 3 * 2 * np.pi / load.omega
    params = IntegratorParams.from_steps(T, 200)
    basis = vibration_modes(model, 1)
    qm = build_quadratic_manifold(basis, static_modal_derivatives(model, basis))
    full = newmark_full(model, load, None, params)
    red = newmark_reduced_qm(model, qm, load, None, params)
    assert row["gre"] == gre_metric(full, red, model.M)
    assert row["gre"] > 0


def test_beam_report_counts_and_outputs(tmp_path):
    techs = ["full", "linearized", "lm_all_smd", "lm_all_md", "qm_smd",
             {"name": "lm_selected", "heuristic": "MMI", "k": 5}, {"name": "pod", "k": 4}]
    cfg = ExperimentConfig.from_dict({**SMALL_BEAM, "techniques": techs, "output": str(tmp_path)})
    rep = run_experiment(cfg)
    n = rep.model["n"]
    nominal = {r["technique"]: r["unknowns_nominal"] for r in rep.rows}
    assert nominal == {"full": n, "linearized": n, "lm_all_smd": 20, "lm_all_md": 30, "qm_smd": 5,
                       "lm_selected_mmi_k5": 10, "pod_k4": 4}
    for r in rep.rows:
        assert r["status"] == "ok"
        assert r["unknowns"] <= r["unknowns_nominal"]
        assert r["gre"] >= 0
    assert rep.row("qm_smd")["unknowns"] == 5
    assert len(rep.row("lm_selected_mmi_k5")["selection"]) == 5
    files = {p.name for p in tmp_path.iterdir()}
    for lab in nominal:
        assert {f"{lab}.csv", f"{lab}_v.csv", f"{lab}_a.csv", f"{lab}.json"} <= files
    assert {"report.json", "report.txt"} <= files
    data = json.loads((tmp_path / "report.json").read_text())
    assert data["conventions"]["pod_snapshots"].startswith("full-run displacements")
    assert set(data["timing"]) == set(nominal)
    text = (tmp_path / "report.txt").read_text()
    assert f"{rep.gre('qm_smd'):.2f}" in text
    _, U, _ = read_trajectory_csv(tmp_path / "qm_smd.csv")
    _, F, _ = read_trajectory_csv(tmp_path / "full.csv")
    assert gre_metric(F, U, build_model(SMALL_BEAM).M) == rep.gre("qm_smd")


def test_report_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        run_experiment(ExperimentConfig.from_dict({**TWO_DOF, "techniques": ["full", "qm_smd", "lm_all_smd"],
                                                   "output": str(d)}))
        data = json.loads((d / "report.json").read_text())
        data.pop("timing")
        outs.append(json.dumps(data, sort_keys=True))
        assert (d / "qm_smd.csv").read_bytes() == (tmp_path / "0" / "qm_smd.csv").read_bytes()
    assert outs[0] == outs[1]


def test_failed_technique_is_marked():
    # rank of the 2-DOF snapshot matrix is 2, so POD with k=3 cannot be built
    rep = run_experiment(ExperimentConfig.from_dict(
        {**TWO_DOF, "techniques": ["full", {"name": "pod", "k": 3}, "qm_smd"]}))
    assert rep.row("pod_k3")["status"] == "failed"
    assert "error" in rep.row("pod_k3")
    assert rep.row("qm_smd")["status"] == "ok"
    assert rep.failed == ["pod_k3"]
    assert "failed" in rep.to_text()
