"""Desk-scale two-area power system used to exercise the synthesis pipeline."""

from __future__ import annotations

import numpy as np

from ..dae import OdeSystem, linearize
from ..errors import DimensionError
from ..signals import SampledSignal
from .loads import LoadDisturbance, LoadDisturbanceParams, sample_load_disturbance, \
    stack_disturbances, step_signal
from .model import AgcData, GeneratorData, PowerSystemConfig, Trajectory, build_two_area_model, \
    default_config, find_equilibrium, output_labels, simulate, state_labels
from .network import KronReduction, Line, assemble_admittance, kron_reduce, line_flow

__all__ = [
    "AgcData", "GeneratorData", "PowerSystemConfig", "Trajectory", "build_two_area_model",
    "default_config", "find_equilibrium", "simulate", "state_labels", "output_labels",
    "KronReduction", "Line", "assemble_admittance", "kron_reduce", "line_flow",
    "LoadDisturbance", "LoadDisturbanceParams", "sample_load_disturbance", "stack_disturbances",
    "step_signal", "nonlinearity_signature_of",
]


def nonlinearity_signature_of(sys: OdeSystem, traj: Trajectory, X_e=None, A=None):
    """``e(t) = [h(X(t)) - A (X(t) - X_e); 0]`` along a recorded trajectory.

    Returns a :class:`SampledSignal` with ``n_X + n_Y`` channels for an
    unbatched trajectory, or the raw array ``(n_X + n_Y, N, ...)`` for a batch.
    """
    if traj.X is None:
        raise DimensionError("trajectory was recorded without states")
    X_e = sys.X_e if X_e is None else np.asarray(X_e, dtype=float)
    A = linearize(sys, X_e) if A is None else A
    X = traj.X
    dX = X - X_e.reshape((-1,) + (1,) * (X.ndim - 1))
    top = sys.drift(X) - np.tensordot(A, dX, axes=1)
    e = np.concatenate([top, np.zeros((sys.n_Y,) + X.shape[1:])], axis=0)
    if e.ndim == 2:
        return SampledSignal(traj.t, e)
    return e
