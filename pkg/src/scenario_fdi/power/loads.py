"""Random load deviations ``alpha_0 + sum_i alpha_i sin(omega_i t + phi_i)`` at generator nodes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["LoadDisturbanceParams", "LoadDisturbance", "sample_load_disturbance", "step_signal",
           "stack_disturbances"]


@dataclass(frozen=True)
class LoadDisturbanceParams:
    """Distribution of one load-deviation pattern.

    Amplitudes and frequencies are uniform on the given ranges, phases uniform
    on ``[0, 2 pi)``, the number of sinusoids ``eta`` uniform on
    ``eta_range`` (inclusive). Each excited node gets an independent draw and
    ``sum alpha_i^2`` is projected onto ``energy_bound`` when it exceeds it.
    """

    n_nodes: int = 3
    nodes: tuple = (0, 1, 2)              # candidate generator nodes (0-based)
    nodes_per_draw: int = 1
    alpha0_range: tuple = (-40.0, 40.0)   # MW
    alpha_range: tuple = (-15.0, 15.0)    # MW
    omega_range: tuple = (0.2, 3.0)       # rad/s
    eta_range: tuple = (0, 2)
    energy_bound: float = 40.0 ** 2 + 2 * 15.0 ** 2
    t_on: float = 1.0                     # onset of the deviation (s)

    def __post_init__(self):
        if not 1 <= self.nodes_per_draw <= len(self.nodes):
            raise ValueError("nodes_per_draw must be between 1 and the number of candidate nodes")
        if any(not 0 <= n < self.n_nodes for n in self.nodes):
            raise ValueError("candidate node outside range")
        if self.eta_range[0] < 0 or self.eta_range[1] < self.eta_range[0]:
            raise ValueError("invalid eta range")
        if self.energy_bound <= 0:
            raise ValueError("energy bound must be positive")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "LoadDisturbanceParams":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass(frozen=True, eq=False)
class LoadDisturbance:
    """Deterministic realization: per-node arrays ``alpha0 (n)``, ``alpha/omega/phi (n, eta_max)``.

    Calling it with a time returns the load deviation at every node, zero before ``t_on``.
    """

    alpha0: np.ndarray
    alpha: np.ndarray
    omega: np.ndarray
    phi: np.ndarray
    t_on: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.alpha0.shape[0]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        tt = t - self.t_on
        on = (tt >= 0).astype(float)
        sines = np.sin(self.omega[..., None] * tt[None, None] + self.phi[..., None]) if t.ndim else \
            np.sin(self.omega * tt + self.phi)
        if t.ndim:
            val = self.alpha0[:, None] + np.sum(self.alpha[..., None] * sines, axis=1)
            return val * on[None, :]
        return (self.alpha0 + np.sum(self.alpha * sines, axis=1)) * on

    def energy(self) -> np.ndarray:
        return self.alpha0 ** 2 + np.sum(self.alpha ** 2, axis=1)


def sample_load_disturbance(params: LoadDisturbanceParams, rng) -> LoadDisturbance:
    """Draw one pattern; ``rng`` is a seed or a :class:`numpy.random.Generator`."""
    rng = np.random.default_rng(rng)
    n = params.n_nodes
    eta_max = params.eta_range[1]
    alpha0 = np.zeros(n)
    alpha = np.zeros((n, eta_max))
    omega = np.zeros((n, eta_max))
    phi = np.zeros((n, eta_max))
    chosen = np.sort(rng.choice(np.asarray(params.nodes), size=params.nodes_per_draw, replace=False))
    for node in chosen:
        eta = int(rng.integers(params.eta_range[0], params.eta_range[1] + 1))
        a0 = rng.uniform(*params.alpha0_range)
        a = rng.uniform(*params.alpha_range, size=eta)
        energy = a0 ** 2 + np.sum(a ** 2)
        if energy > params.energy_bound:
            s = np.sqrt(params.energy_bound / energy)
            a0, a = a0 * s, a * s
        alpha0[node] = a0
        alpha[node, :eta] = a
        omega[node, :eta] = rng.uniform(*params.omega_range, size=eta)
        phi[node, :eta] = rng.uniform(0.0, 2 * np.pi, size=eta)
    return LoadDisturbance(alpha0, alpha, omega, phi, params.t_on, {"nodes": chosen.tolist()})


def step_signal(levels, t_on: float):
    """Callable returning ``levels`` (vector) for ``t >= t_on`` and zero before."""
    levels = np.asarray(levels, dtype=float)

    def sig(t):
        return levels * (1.0 if t >= t_on else 0.0)

    return sig


def stack_disturbances(dists):
    """Batch callable: column ``b`` of the output is ``dists[b](t)``."""
    alpha0 = np.stack([d.alpha0 for d in dists], axis=-1)            # (n, B)
    eta = max(d.alpha.shape[1] for d in dists)

    def pad(x):
        return np.pad(x, ((0, 0), (0, eta - x.shape[1])))

    alpha = np.stack([pad(d.alpha) for d in dists], axis=-1)         # (n, eta, B)
    omega = np.stack([pad(d.omega) for d in dists], axis=-1)
    phi = np.stack([pad(d.phi) for d in dists], axis=-1)
    t_on = np.array([d.t_on for d in dists])

    def sig(t):
        tt = t - t_on
        val = alpha0 + np.sum(alpha * np.sin(omega * tt + phi), axis=1)
        return val * (tt >= 0)

    return sig
