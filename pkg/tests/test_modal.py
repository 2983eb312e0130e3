import numpy as np
import pytest

from qmrom.algebra import solve_bordered, sym_generalized_eig
from qmrom.errors import SingularMatrixError
from qmrom.modal import (ModalBasis, linear_modal_run, modal_derivative, modal_derivatives,
                         static_modal_derivative, static_modal_derivatives, vibration_modes)
from qmrom.model import (CustomModel, LinearModel, LoadCase, TwoDofParams,
                         stiffness_directional_derivative, two_dof_model, von_karman_beam)


@pytest.fixture(scope="module")
def beam():
    return von_karman_beam()


@pytest.fixture(scope="module")
def beam5(beam):
    return vibration_modes(beam, 5)


def eigvec_near(K, M, phi):
    """Mass-normalized eigenvector of (K, M) closest to ``phi``, sign-aligned."""
    eig = sym_generalized_eig(K, M, K.shape[0])
    V = eig.vectors
    k = int(np.argmax(np.abs(V.T @ M @ phi)))
    v = V[:, k]
    return v if v @ M @ phi > 0 else -v


# -- modes ------------------------------------------------------------------

def test_two_dof_modes():
    p = TwoDofParams(m1=2.0, m2=3.0, k1=1.0, k2=50.0)
    b = vibration_modes(two_dof_model(p), 2)
    np.testing.assert_allclose(b.omega_sq, [0.5, 50.0 / 3.0], rtol=1e-14)
    np.testing.assert_allclose(b.Phi, np.diag([1 / np.sqrt(2), 1 / np.sqrt(3)]), atol=1e-15)
    assert b.mode_numbers == (1, 2)


def test_mode_selection_by_number(beam, beam5):
    sel = vibration_modes(beam, mode_numbers=[1, 3])
    np.testing.assert_allclose(sel.Phi, beam5.Phi[:, [0, 2]], atol=1e-10 * np.abs(sel.Phi).max())
    assert sel.mode_numbers == (1, 3)
    with pytest.raises(ValueError):
        vibration_modes(beam, beam.n + 1)
    with pytest.raises(ValueError):
        vibration_modes(beam, mode_numbers=[0])


def test_complete_basis_diagonalizes():
    mdl = von_karman_beam(n_elements=3)
    b = vibration_modes(mdl, mdl.n)
    D = b.Phi.T @ mdl.K0 @ b.Phi
    assert np.abs(D - np.diag(np.diag(D))).max() <= 1e-9 * np.abs(D).max()
    np.testing.assert_allclose(b.Phi.T @ mdl.M @ b.Phi, np.eye(mdl.n), atol=1e-10)


def test_beam_frequency_pattern(beam5):
    w = beam5.omega
    for i in (2, 3):
        assert w[i - 1] / w[0] == pytest.approx(i**2, rel=0.02)


# -- modal derivatives ------------------------------------------------------

def test_md_zero_for_linear_model():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 4))
    mdl = LinearModel(A @ A.T + 4 * np.eye(4), np.eye(4))
    b = vibration_modes(mdl, 3)
    md = modal_derivatives(mdl, b)
    assert not md.tensor.any()
    assert not md.eigenvalue_sensitivities.any()
    assert not static_modal_derivatives(mdl, b).tensor.any()


def test_two_dof_md_constraint_and_dense_solve():
    p = TwoDofParams(m1=1.5, m2=0.8, k1=2.0, k2=20.0, a=1.2, b=0.3, c=0.7)
    mdl = two_dof_model(p)
    b = vibration_modes(mdl, 2)
    theta, dlam = modal_derivative(mdl, b, 0, 0)
    phi = b.Phi[:, 0]
    assert abs(phi @ mdl.M @ theta) < 1e-12
    # independent dense 3x3 solve
    dK = np.array([[0.0, p.a], [2 * p.c, 0.0]]) * phi[0]
    B = np.zeros((3, 3))
    B[:2, :2] = mdl.K0 - b.omega_sq[0] * mdl.M
    B[:2, 2] = B[2, :2] = -mdl.M @ phi
    ref = np.linalg.solve(B, np.append(-dK @ phi, 0.0))
    np.testing.assert_allclose(theta, ref[:2], rtol=1e-12, atol=1e-15)
    assert dlam == pytest.approx(ref[2], abs=1e-14)
    # closed form: theta = [0, -2c phi1^2 / (k2 - m2 k1/m1)]
    w2 = p.k1 / p.m1
    np.testing.assert_allclose(theta, [0.0, -2 * p.c * phi[0] ** 2 / (p.k2 - w2 * p.m2)], atol=1e-15)


def test_bordered_with_zero_frequency_gives_smd():
    p = TwoDofParams(k2=7.0, c=1.3)
    mdl = two_dof_model(p)
    b = vibration_modes(mdl, 1)
    phi = b.Phi[:, 0]
    dK = stiffness_directional_derivative(mdl, phi)
    x, lam = solve_bordered(mdl.K0, mdl.M @ phi, -dK @ phi)
    np.testing.assert_allclose(x, static_modal_derivative(mdl, b, 0, 0), atol=1e-15)
    assert abs(lam) < 1e-15


def test_md_asymmetry_on_beam(beam, beam5):
    md = modal_derivatives(beam, beam5)
    d = np.linalg.norm(md.vector(0, 1) - md.vector(1, 0)) / np.linalg.norm(md.vector(0, 1))
    assert d > 1e-6
    assert md.symmetry_residual().max() > 1e-6


def test_md_constraint_all_pairs(beam, beam5):
    md = modal_derivatives(beam, beam5)
    M = beam.M
    for i in range(5):
        phiM = M @ beam5.Phi[:, i]
        for j in range(5):
            th = md.vector(i, j)
            assert abs(phiM @ th) <= 1e-12 * np.linalg.norm(phiM) * np.linalg.norm(th)


def test_repeated_eigenvalue_rejected():
    mdl = CustomModel(np.eye(3), lambda u: np.array([u[0] + u[0] * u[2], u[1], 2 * u[2]]))
    b = ModalBasis(np.eye(3)[:, :2], np.array([1.0, 1.0]), (1, 2))
    with pytest.raises(SingularMatrixError, match="repeated"):
        modal_derivative(mdl, b, 0, 0)


# -- static modal derivatives ------------------------------------------------

def test_two_dof_smd_closed_form():
    p = TwoDofParams(k2=6.0, c=0.9)
    mdl = two_dof_model(p)
    th = static_modal_derivative(mdl, vibration_modes(mdl, 1), 0, 0)
    np.testing.assert_allclose(th, [0.0, -2 * p.c / p.k2], atol=1e-15)


def test_two_dof_smd_scales_with_mass():
    # both the direction and the displaced mode carry phi_1 = 1/sqrt(m1)
    p = TwoDofParams(m1=2.5, k2=6.0, c=0.9)
    mdl = two_dof_model(p)
    th = static_modal_derivative(mdl, vibration_modes(mdl, 1), 0, 0)
    np.testing.assert_allclose(th, [0.0, -2 * p.c / (p.k2 * p.m1)], atol=1e-15)


def test_smd_symmetry_and_residual(beam, beam5):
    smd = static_modal_derivatives(beam, beam5, both_orders=True)
    assert smd.computed.all()
    assert smd.symmetry_residual().max() < 1e-10
    for i in range(5):
        for j in range(5):
            dK = stiffness_directional_derivative(beam, beam5.Phi[:, j])
            r = beam.K0 @ smd.vector(i, j) + dK @ beam5.Phi[:, i]
            assert np.linalg.norm(r) <= 1e-12 * np.linalg.norm(dK @ beam5.Phi[:, i])


def test_smd_single_order_mirrors(beam, beam5):
    smd = static_modal_derivatives(beam, beam5)
    np.testing.assert_array_equal(smd.tensor, smd.tensor.transpose(0, 2, 1))
    assert len(smd.pairs()) == 15
    assert len(modal_derivatives(beam, beam5).pairs()) == 25


def test_eigen_perturbation_slope(beam, beam5):
    md = modal_derivatives(beam, beam5)
    i, j = 0, 2
    phi_i, phi_j = beam5.Phi[:, i], beam5.Phi[:, j]
    th = md.vector(i, j)
    eps0 = 0.05 * beam.spec.thickness / np.abs(phi_j).max()
    errs = []
    for eps in eps0 / 2.0 ** np.arange(4):
        v = eigvec_near(beam.tangent_stiffness(eps * phi_j), beam.M, phi_i)
        errs.append(np.linalg.norm(v - phi_i - eps * th))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5)), ratios


def test_eigenvalue_sensitivity_fd(beam, beam5):
    md = modal_derivatives(beam, beam5)
    i, j = 1, 0
    h = 1e-3 * beam.spec.thickness / np.abs(beam5.Phi[:, j]).max()
    lam = [sym_generalized_eig(beam.tangent_stiffness(s * h * beam5.Phi[:, j]), beam.M, 2).values[i]
           for s in (1, -1)]
    assert (lam[0] - lam[1]) / (2 * h) == pytest.approx(md.eigenvalue_sensitivities[i, j],
                                                       rel=1e-4, abs=1e-6 * beam5.omega_sq[i])


# -- linear modal runs --------------------------------------------------------

def test_linear_run_zero_load(beam, beam5):
    lc = LoadCase(np.ones(beam.n), "quasi_periodic", 0.0, 1000.0)
    hist = linear_modal_run(beam, beam5, lc, 1e-3, 50)
    assert not hist.eta.any()


def test_linear_run_sdof_analytic():
    # undamped single mode under sin load, from rest:
    # eta = F/(w^2 - W^2) (sin Wt - (W/w) sin wt)
    w, W, F = 2.0, 0.7, 1.0
    mdl = LinearModel(np.array([[w * w]]), np.eye(1))
    b = vibration_modes(mdl, 1)
    lc = LoadCase(np.array([F]), "custom_samples", 1.0,
                  samples=(np.linspace(0, 40, 40001), np.sin(W * np.linspace(0, 40, 40001))))
    T = 20.0
    exact = lambda t: F / (w * w - W * W) * (np.sin(W * t) - W / w * np.sin(w * t))
    errs = []
    for n in (400, 800, 1600):
        hist = linear_modal_run(mdl, b, lc, T, n, zeta=0.0)
        errs.append(np.abs(hist.eta[:, 0] - exact(hist.times)).max())
    assert 3.6 < errs[0] / errs[1] < 4.4
    assert 3.6 < errs[1] / errs[2] < 4.4


def test_uniform_load_leaves_antisymmetric_modes_idle(beam, beam5):
    lc = LoadCase(beam.uniform_transverse_load(), "quasi_periodic", 100.0, beam5.omega[0])
    hist = linear_modal_run(beam, beam5, lc, 5 * 2 * np.pi / beam5.omega[0], 400)
    top = np.abs(hist.eta[:, 0]).max()
    assert top > 0
    assert np.abs(hist.eta[:, 1]).max() < 1e-10 * top
    assert np.abs(hist.eta[:, 3]).max() < 1e-10 * top
