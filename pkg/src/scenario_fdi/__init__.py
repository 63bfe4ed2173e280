"""Scenario-based fault detection filters for nonlinear differential-algebraic models.

The package builds residual filters ``r = a(p)^{-1} N(p) L(p) z`` that are
insensitive to the linear part of a model, sensitive to a chosen fault, and
trained on sampled disturbance scenarios so that the nonlinear remainder stays
small in an average or chance-constrained sense.
"""

__version__ = "0.1.0"

from .dae import NonlinearDaeModel, OdeSystem, detectability_check, isolate_fault, linear_ode, \
    linearize, ode_to_dae, stack_system
from .errors import FdiError
from .polymatrix import PolyMatrix
from .runtime import ResidualTrace, StateSpaceFilter, realize_filter, residual_l2, rho_indicator, \
    run_filter, threshold_alarm, windowed_l2
from .signals import SampledSignal
from .signature import BasisSpec, SignatureMatrix, make_fourier_basis, signature_matrix, \
    signature_matrix_exact
from .synthesis import FilterCoefficients, PayoffSpec, ScenarioParams, SynthesisResult, \
    feasible_filter, max_sensitivity_filter, robust_filter_qp, sample_complexity, \
    two_stage_average, two_stage_chance

__all__ = [
    "__version__", "NonlinearDaeModel", "OdeSystem", "detectability_check", "isolate_fault",
    "linear_ode", "linearize", "ode_to_dae", "stack_system", "FdiError", "PolyMatrix",
    "ResidualTrace", "StateSpaceFilter", "realize_filter", "residual_l2", "rho_indicator",
    "run_filter", "threshold_alarm", "windowed_l2", "SampledSignal", "BasisSpec",
    "SignatureMatrix", "make_fourier_basis", "signature_matrix", "signature_matrix_exact",
    "FilterCoefficients", "PayoffSpec", "ScenarioParams", "SynthesisResult", "feasible_filter",
    "max_sensitivity_filter", "robust_filter_qp", "sample_complexity", "two_stage_average",
    "two_stage_chance",
]
