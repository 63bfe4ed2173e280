"""Uniformly sampled multi-channel signals and L2 quadrature on their grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import simpson

from .errors import DimensionError

__all__ = ["SampledSignal", "integrate", "l2_inner", "l2_norm", "uniform_grid"]


def uniform_grid(T: float, dt: float) -> np.ndarray:
    n = int(round(T / dt))
    if not np.isclose(n * dt, T, rtol=1e-9, atol=0.0):
        raise DimensionError(f"horizon {T} is not a multiple of dt={dt}")
    return np.linspace(0.0, T, n + 1)


def integrate(y, t) -> np.ndarray:
    """Composite Simpson quadrature along the last axis."""
    return simpson(y, x=t, axis=-1)


def l2_inner(a, b, t) -> float:
    """``<a, b> = int a(t)^T b(t) dt`` for arrays with time on the last axis."""
    return float(np.sum(integrate(np.asarray(a) * np.asarray(b), t)))


def l2_norm(a, t) -> float:
    return float(np.sqrt(max(l2_inner(a, a, t), 0.0)))


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Multi-channel time series on a uniform grid.

    ``values`` has shape ``(channels, len(t))``; a 1-D array is one channel.
    """

    t: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if t.ndim != 1 or t.size < 2:
            raise DimensionError("time grid must be 1-D with at least two samples")
        if v.shape[-1] != t.size:
            raise DimensionError(f"{v.shape[-1]} samples for a grid of {t.size} points")
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise DimensionError("time grid must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
            raise DimensionError("time grid must be uniform")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "values", v)

    @property
    def dt(self) -> float:
        return float((self.t[-1] - self.t[0]) / (self.t.size - 1))

    @property
    def T(self) -> float:
        return float(self.t[-1] - self.t[0])

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.t.size

    def channel(self, i) -> np.ndarray:
        return self.values[i]

    def l2_norm(self) -> float:
        return l2_norm(self.values, self.t - self.t[0])

    def window(self, t0: float, t1: float) -> "SampledSignal":
        mask = (self.t >= t0 - 1e-12) & (self.t <= t1 + 1e-12)
        return SampledSignal(self.t[mask], self.values[:, mask])

    def to_csv(self, path, names=None) -> None:
        names = names or [f"ch{i}" for i in range(self.n_channels)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + list(names))
            for k in range(self.t.size):
                w.writerow([repr(float(self.t[k]))] + [repr(float(x)) for x in self.values[:, k]])

    @classmethod
    def from_csv(cls, path) -> "SampledSignal":
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1:].T)
