"""Quadratic-manifold reduced-order models for geometrically nonlinear structural dynamics."""

from .algebra import (EigenPairs, contract_t3, contract_t3_once, deflate_basis,
                      solve_bordered, sym_generalized_eig, symmetrize3)
from .errors import (ConfigError, ConvergenceError, NumericalError, ReductionError,
                     SingularMatrixError)
from .integrate import (IntegratorParams, Trajectory, newmark_full, newmark_reduced_linear,
                        newmark_reduced_qm, qm_reduced_residual)
from .manifold import (LinearManifold, QuadraticManifold, WeightMatrix, build_linear_manifold,
                       build_quadratic_manifold, mmi_weights, mvw_weights, pod_basis, qm_kinematics,
                       qm_map, qm_tangent, select_top_k)
from .modal import (ModalAmplitudeHistory, ModalBasis, ModalDerivativeSet, linear_modal_run,
                    modal_derivative, modal_derivatives, static_modal_derivative,
                    static_modal_derivatives, vibration_modes)
from .model import (BeamModelSpec, CustomModel, LinearModel, LoadCase, StructuralModel,
                    TwoDofModel, TwoDofParams, VonKarmanBeam, assemble_load, linearized,
                    load_amplitude, rayleigh_damping, stiffness_directional_derivative,
                    two_dof_model, von_karman_beam)

__version__ = "0.1.0"
