"""Network algebra: admittance assembly, Kron reduction and line flows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, FdiError

__all__ = ["Line", "assemble_admittance", "kron_reduce", "KronReduction", "line_flow"]


@dataclass(frozen=True)
class Line:
    """Series branch between buses ``i`` and ``j`` (0-based) with impedance ``r + jx`` and total charging ``b``."""

    i: int
    j: int
    r: float = 0.0
    x: float = 0.1
    b: float = 0.0

    @property
    def y(self) -> complex:
        return 1.0 / complex(self.r, self.x)


def assemble_admittance(n: int, lines, shunts=None) -> np.ndarray:
    """Bus admittance matrix from series lines (pi model) and per-bus shunt admittances."""
    Y = np.zeros((n, n), dtype=complex)
    for ln in lines:
        if not (0 <= ln.i < n and 0 <= ln.j < n) or ln.i == ln.j:
            raise DimensionError(f"line {ln} does not connect two distinct buses of {n}")
        y = ln.y
        Y[ln.i, ln.i] += y + 0.5j * ln.b
        Y[ln.j, ln.j] += y + 0.5j * ln.b
        Y[ln.i, ln.j] -= y
        Y[ln.j, ln.i] -= y
    if shunts is not None:
        Y[np.diag_indices(n)] += np.asarray(shunts, dtype=complex)
    return Y


@dataclass(frozen=True, eq=False)
class KronReduction:
    """``Y_red = Y_gg - Y_gn Y_nn^{-1} Y_ng`` and the voltage map ``V_n = M E_g``."""

    Y_red: np.ndarray
    M: np.ndarray

    @property
    def G(self) -> np.ndarray:
        return self.Y_red.real

    @property
    def B(self) -> np.ndarray:
        return self.Y_red.imag


def kron_reduce(Y: np.ndarray, n_keep: int, cond_max: float = 1e12) -> KronReduction:
    """Eliminate every node after the first ``n_keep``.

    Raises
    ------
    FdiError
        If the interior block is singular (condition number above ``cond_max``).
    """
    Y = np.asarray(Y, dtype=complex)
    n = Y.shape[0]
    if Y.shape != (n, n) or not 0 < n_keep <= n:
        raise DimensionError(f"cannot keep {n_keep} nodes of a {Y.shape} admittance matrix")
    Ygg = Y[:n_keep, :n_keep]
    if n_keep == n:
        return KronReduction(Ygg.copy(), np.zeros((0, n_keep), dtype=complex))
    Ygn = Y[:n_keep, n_keep:]
    Yng = Y[n_keep:, :n_keep]
    Ynn = Y[n_keep:, n_keep:]
    if np.linalg.cond(Ynn) > cond_max:
        raise FdiError("interior admittance block is singular; add load shunts or lines")
    M = -np.linalg.solve(Ynn, Yng)
    return KronReduction(Ygg + Ygn @ M, M)


def line_flow(V_i, V_j, y: complex, b: float = 0.0):
    """Active power sent from bus ``i`` towards ``j`` through a pi branch (per unit)."""
    I = (V_i - V_j) * y + 0.5j * b * V_i
    return np.real(V_i * np.conj(I))
