"""Running synthesized filters on measurement streams.

The residual generator ``r = a^{-1}(p) N(p) L(p) z`` is realized in observable
canonical form and integrated exactly for piecewise-linear inputs (first-order
hold), so the only error left is the interpolation of the sampled input.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import DimensionError, ImproperTransferFunction, UndefinedIndicator
from .lti import check_stable, foh_discretize, simulate_states
from .polymatrix import PolyMatrix
from .signals import SampledSignal, l2_norm
from .synthesis import FilterCoefficients

__all__ = [
    "StateSpaceFilter",
    "ResidualTrace",
    "realize_filter",
    "realize_transfer",
    "run_filter",
    "filter_response",
    "residual_l2",
    "rho_indicator",
    "windowed_l2",
    "threshold_alarm",
]


@dataclass(eq=False)
class StateSpaceFilter:
    """``x' = A x + B z``, ``r = C x + D z`` with a mutable integration state."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    dt: Optional[float] = None
    state: np.ndarray = field(default=None)
    _disc: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        n = self.B.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(n, n)
        self.C = np.asarray(self.C, dtype=float).reshape(1, n)
        self.D = np.asarray(self.D, dtype=float).reshape(1, self.B.shape[1])
        if self.state is None:
            self.state = np.zeros(self.order)

    @property
    def order(self) -> int:
        return self.A.shape[0]

    @property
    def n_z(self) -> int:
        return self.B.shape[1]

    def transfer(self, s) -> np.ndarray:
        """Frequency response ``C (sI - A)^{-1} B + D`` (a ``1 x n_z`` row)."""
        if self.order == 0:
            return self.D.astype(complex)
        return self.C @ np.linalg.solve(s * np.eye(self.order) - self.A, self.B) + self.D

    def discretized(self, dt: float):
        if self._disc is None or self._disc[0] != dt:
            self._disc = (dt,) + foh_discretize(self.A, self.B, dt)
        return self._disc[1:]

    def reset(self) -> None:
        self.state = np.zeros(self.order)

    def clone(self) -> "StateSpaceFilter":
        return StateSpaceFilter(self.A.copy(), self.B.copy(), self.C.copy(), self.D.copy(),
                                self.dt, self.state.copy())


def realize_transfer(num: PolyMatrix, a) -> StateSpaceFilter:
    """Observable canonical realization of ``num(p) / a(p)`` for a ``1 x n_z`` numerator."""
    a = np.trim_zeros(np.asarray(a.coeffs[:, 0, 0] if isinstance(a, PolyMatrix) else a,
                                 dtype=float), "b")
    check_stable(a)
    num = num.trimmed()
    if num.rows != 1:
        raise DimensionError("numerator must have a single row")
    ell = a.size - 1
    if num.degree > ell:
        raise ImproperTransferFunction(f"numerator degree {num.degree} exceeds deg a = {ell}")
    lead = a[-1]
    alpha = a / lead
    b = num.padded(ell).coeffs[:, 0, :] / lead  # (ell + 1, n_z)
    D = b[ell][None, :]
    Bt = b[:ell] - alpha[:ell, None] * b[ell][None, :]
    A = np.zeros((ell, ell))
    if ell:
        A[1:, :-1] = np.eye(ell - 1)
        A[:, -1] = -alpha[:ell]
    C = np.zeros((1, ell))
    if ell:
        C[0, -1] = 1.0
    return StateSpaceFilter(A, Bt, C, D)


def realize_filter(filt: FilterCoefficients, L: PolyMatrix) -> StateSpaceFilter:
    """Realize ``a^{-1}(p) N(p) L(p)`` from the synthesized coefficients and the model's ``L``."""
    if L.rows != filt.n_r:
        raise DimensionError(f"L has {L.rows} rows, filter has {filt.n_r} channels")
    return realize_transfer(filt.N @ L, filt.a)


def filter_response(ssf: StateSpaceFilter, z: np.ndarray, dt: float, x0=None):
    """Residual for raw inputs ``z`` of shape ``(n_z, N, ...)``; returns ``(r, final_state)``.

    ``r`` has shape ``(N, ...)``.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[0] != ssf.n_z:
        raise DimensionError(f"filter expects {ssf.n_z} channels, got {z.shape[0]}")
    Phi, G0, G1 = ssf.discretized(dt)
    X = simulate_states(Phi, G0, G1, z, x0)
    r = np.tensordot(ssf.C[0], X, axes=1) + np.tensordot(ssf.D[0], z, axes=1)
    return r, X[:, -1]


@dataclass(eq=False)
class ResidualTrace:
    """Single-channel residual with the threshold and alarm instants that go with it."""

    signal: SampledSignal
    gamma: float = float("inf")
    alarm_times: list = field(default_factory=list)
    window: Optional[float] = None

    @property
    def t(self) -> np.ndarray:
        return self.signal.t

    @property
    def r(self) -> np.ndarray:
        return self.signal.values[0]

    def to_csv(self, path) -> None:
        T_w = self.window if self.window is not None else self.signal.T
        wl2 = windowed_l2(self, T_w)
        thr = np.sqrt(self.gamma) if np.isfinite(self.gamma) else np.inf
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "r", "windowed_l2", "alarm"])
            for k in range(self.t.size):
                flag = int(np.isfinite(wl2[k]) and wl2[k] > thr)
                w.writerow([repr(float(self.t[k])), repr(float(self.r[k])), repr(float(wl2[k])), flag])


def run_filter(ssf: StateSpaceFilter, z: SampledSignal) -> ResidualTrace:
    """Integrate the filter from rest over ``z``; the final state is left in ``ssf.state``."""
    if ssf.dt is not None and not np.isclose(ssf.dt, z.dt, rtol=1e-9):
        raise DimensionError(f"filter step {ssf.dt} differs from signal step {z.dt}")
    r, xf = filter_response(ssf, z.values, z.dt)
    ssf.state = xf
    return ResidualTrace(SampledSignal(z.t, r))


def residual_l2(trace: ResidualTrace, window: Optional[tuple] = None) -> float:
    """L2 norm of the residual on ``window = (t0, t1)`` (whole trace by default)."""
    if window is None:
        return trace.signal.l2_norm()
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("empty window")
    if t0 < trace.t[0] - 1e-12 or t1 > trace.t[-1] + 1e-12:
        raise ValueError(f"window [{t0}, {t1}] outside the trace support")
    sub = trace.signal.window(t0, t1)
    if sub.t.size < 2:
        raise ValueError("window holds fewer than two samples")
    return l2_norm(sub.values, sub.t)


def rho_indicator(trace, T_ack: float) -> float:
    """``max_{t <= T_ack} |r| / max_t |r|``; low values mean the residual stayed quiet before the attack."""
    t = trace.t
    r = np.abs(trace.r)
    if not t[0] < T_ack < t[-1]:
        raise ValueError(f"T_ack={T_ack} must lie strictly inside ({t[0]}, {t[-1]})")
    den = r.max()
    if not den > 0:
        raise UndefinedIndicator("residual is identically zero")
    return float(r[t <= T_ack].max() / den)


def windowed_l2(trace: ResidualTrace, T_w: float) -> np.ndarray:
    """Trailing-window L2 norm ``sqrt(int_{t-T_w}^t r^2)``; ``nan`` until a full window is available."""
    if T_w <= 0:
        raise ValueError("window length must be positive")
    t = trace.t
    energy = cumulative_simpson(trace.r ** 2, x=t, initial=0.0)
    dt = trace.signal.dt
    lag = int(round(T_w / dt))
    out = np.full(t.size, np.nan)
    if lag <= t.size - 1:
        out[lag:] = np.sqrt(np.maximum(energy[lag:] - energy[:t.size - lag], 0.0))
    return out


def threshold_alarm(trace: ResidualTrace, gamma_star: float, T_w: Optional[float] = None) -> list:
    """Instants where the windowed L2 norm first exceeds ``sqrt(gamma_star)``.

    One time is reported per upward crossing. ``T_w`` defaults to the trace
    length. The alarm times and threshold are also stored on ``trace``.
    """
    T_w = trace.signal.T if T_w is None else T_w
    trace.gamma = float(gamma_star)
    trace.window = T_w
    if not np.isfinite(gamma_star):
        trace.alarm_times = []
        return []
    wl2 = windowed_l2(trace, T_w)
    above = np.where(np.isfinite(wl2), wl2 > np.sqrt(max(gamma_star, 0.0)), False)
    rising = above & ~np.concatenate([[False], above[:-1]])
    times = [float(x) for x in trace.t[rising]]
    trace.alarm_times = times
    return times
