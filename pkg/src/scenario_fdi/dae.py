"""Polynomial DAE models ``E(x) + H(p)x + L(p)z + F(p)f = 0`` and their tooling.

Covers the ODE embedding in deviation coordinates, block-Toeplitz stacking of
the residual-generator conditions, fault isolation rewriting and the generic
rank test for detectability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, EquilibriumError
from .polymatrix import PolyMatrix, eval_poly_matrix

__all__ = [
    "NonlinearDaeModel",
    "OdeSystem",
    "StackedSystem",
    "DetectabilityReport",
    "stack_system",
    "ode_to_dae",
    "isolate_fault",
    "detectability_check",
    "linearize",
    "linear_ode",
    "EQUILIBRIUM_TOL",
]

EQUILIBRIUM_TOL = 1e-9


def _zero_nonlinearity(n_r: int) -> Callable:
    def E(x):
        x = np.asarray(x, dtype=float)
        return np.zeros((n_r,) + x.shape[1:])

    return E


@dataclass(frozen=True, eq=False)
class NonlinearDaeModel:
    """``E(x) + H(p) x + L(p) z + F(p) f = 0``.

    ``E`` maps an array with the unknowns on axis 0 (shape ``(n_x, ...)``) to
    an array of shape ``(n_r, ...)``. ``E=None`` means a linear model.
    ``origin`` optionally records the ODE, equilibrium and Jacobian the model
    was built from.
    """

    H: PolyMatrix
    L: PolyMatrix
    F: PolyMatrix
    E: Optional[Callable] = None
    origin: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        n_r = self.H.rows
        if self.L.rows != n_r or self.F.rows != n_r:
            raise DimensionError(
                f"row counts differ: H {self.H.rows}, L {self.L.rows}, F {self.F.rows}"
            )
        if self.E is None:
            object.__setattr__(self, "E", _zero_nonlinearity(n_r))

    @property
    def n_r(self) -> int:
        return self.H.rows

    @property
    def n_x(self) -> int:
        return self.H.cols

    @property
    def n_z(self) -> int:
        return self.L.cols

    @property
    def n_f(self) -> int:
        return self.F.cols

    @property
    def is_linear(self) -> bool:
        return self.origin is not None and self.origin.get("linear", False)

    def linearized(self) -> "NonlinearDaeModel":
        """Same polynomial part with ``E`` set identically to zero."""
        origin = dict(self.origin or {})
        origin["linear"] = True
        return NonlinearDaeModel(self.H, self.L, self.F, None, origin)


@dataclass(frozen=True, eq=False)
class OdeSystem:
    """``X' = h(X) + B_d d + B_f f``, ``Y = C X``.

    ``drift`` takes the state on axis 0 and must broadcast over trailing axes
    so that batches of trajectories can be integrated together. ``jacobian``
    (optional) returns the analytic ``dh/dX`` at a single state.
    """

    drift: Callable
    B_d: np.ndarray
    B_f: np.ndarray
    C: np.ndarray
    jacobian: Optional[Callable] = None
    X_e: Optional[np.ndarray] = None
    name: str = "custom"
    params: Optional[dict] = field(default=None, repr=False)
    meta: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        B_d = np.atleast_2d(np.asarray(self.B_d, dtype=float))
        B_f = np.atleast_2d(np.asarray(self.B_f, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n_X = C.shape[1]
        if B_d.shape[0] != n_X or B_f.shape[0] != n_X:
            raise DimensionError(
                f"input matrices need {n_X} rows, got B_d {B_d.shape}, B_f {B_f.shape}"
            )
        object.__setattr__(self, "B_d", B_d)
        object.__setattr__(self, "B_f", B_f)
        object.__setattr__(self, "C", C)
        if self.X_e is not None:
            X_e = np.asarray(self.X_e, dtype=float)
            if X_e.shape != (n_X,):
                raise DimensionError(f"X_e must have shape ({n_X},), got {X_e.shape}")
            object.__setattr__(self, "X_e", X_e)

    @property
    def n_X(self) -> int:
        return self.C.shape[1]

    @property
    def n_d(self) -> int:
        return self.B_d.shape[1]

    @property
    def n_f(self) -> int:
        return self.B_f.shape[1]

    @property
    def n_Y(self) -> int:
        return self.C.shape[0]

    def rhs(self, X, d, f):
        """Full right-hand side for batched ``X`` (n_X, ...), ``d`` (n_d, ...), ``f`` (n_f, ...)."""
        return self.drift(X) + np.tensordot(self.B_d, d, axes=1) + np.tensordot(self.B_f, f, axes=1)

    def with_equilibrium(self, X_e) -> "OdeSystem":
        return OdeSystem(self.drift, self.B_d, self.B_f, self.C, self.jacobian,
                         np.asarray(X_e, dtype=float), self.name, self.params, self.meta)


def linear_ode(A, B_d, B_f, C, name="linear") -> OdeSystem:
    """ODE with linear drift ``h(X) = A X`` and analytic Jacobian."""
    A = np.atleast_2d(np.asarray(A, dtype=float))

    def drift(X):
        return np.tensordot(A, X, axes=1)

    return OdeSystem(drift, B_d, B_f, C, jacobian=lambda X: A.copy(), name=name,
                     params={"A": A.tolist()})


def linearize(sys: OdeSystem, X_e) -> np.ndarray:
    """Jacobian of the drift at ``X_e``.

    Uses the analytic Jacobian when provided, otherwise central differences with
    per-coordinate step ``max(1e-6, 1e-6 |X_e,i|)``.
    """
    X_e = np.asarray(X_e, dtype=float)
    if sys.jacobian is not None:
        A = np.asarray(sys.jacobian(X_e), dtype=float)
    else:
        n = X_e.size
        steps = np.maximum(1e-6, 1e-6 * np.abs(X_e))
        P = X_e[:, None] + np.diag(steps)
        M = X_e[:, None] - np.diag(steps)
        A = (sys.drift(P) - sys.drift(M)) / (2.0 * steps[None, :])
        A = A.reshape(n, n)
    if not np.all(np.isfinite(A)):
        raise EquilibriumError("non-finite entries in the linearization")
    return A


def ode_to_dae(sys: OdeSystem, X_e=None, tol: float = EQUILIBRIUM_TOL) -> NonlinearDaeModel:
    """Embed the ODE into DAE form around an equilibrium, in deviation coordinates.

    ``x = [X - X_e; d]``, ``z = Y - C X_e`` and::

        H(p) = [[-pI + A, B_d], [C, 0]],  L(p) = [[0], [-I]],  F(p) = [[B_f], [0]],
        E(x) = [h(X) - A (X - X_e); 0]

    so that ``E`` vanishes to first order at ``x = 0``.
    """
    if X_e is None:
        X_e = sys.X_e
    if X_e is None:
        raise EquilibriumError("no equilibrium supplied")
    X_e = np.asarray(X_e, dtype=float)
    res = np.max(np.abs(sys.drift(X_e))) if X_e.size else 0.0
    if not np.isfinite(res) or res > tol:
        raise EquilibriumError(f"equilibrium residual {res:.3e} exceeds tolerance {tol:.1e}")
    A = linearize(sys, X_e)
    n_X, n_d, n_f, n_Y = sys.n_X, sys.n_d, sys.n_f, sys.n_Y
    n_r = n_X + n_Y

    H0 = np.block([[A, sys.B_d], [sys.C, np.zeros((n_Y, n_d))]])
    H1 = np.zeros_like(H0)
    H1[:n_X, :n_X] = -np.eye(n_X)
    H = PolyMatrix(np.stack([H0, H1]))
    L = PolyMatrix(np.vstack([np.zeros((n_X, n_Y)), -np.eye(n_Y)]))
    F = PolyMatrix(np.vstack([sys.B_f, np.zeros((n_Y, n_f))]))

    drift = sys.drift

    def E(x):
        x = np.asarray(x, dtype=float)
        dX = x[:n_X]
        X = X_e.reshape((n_X,) + (1,) * (dX.ndim - 1)) + dX
        top = drift(X) - np.tensordot(A, dX, axes=1)
        return np.concatenate([top, np.zeros((n_Y,) + dX.shape[1:])], axis=0)

    origin = {"ode": sys, "X_e": X_e, "A": A, "linear": False}
    return NonlinearDaeModel(H, L, F, E, origin)


def isolate_fault(model: NonlinearDaeModel, target: int) -> NonlinearDaeModel:
    """Move all faults except ``target`` (1-based) into the unknowns.

    Returns the model ``E(x) + [H, F~](p)[x; f~] + L(p) z + F_target(p) f = 0``.
    """
    n_f = model.n_f
    if n_f <= 1:
        raise ValueError("nothing to isolate: model has a single fault channel")
    if not 1 <= target <= n_f:
        raise ValueError(f"target fault {target} outside 1..{n_f}")
    j = target - 1
    others = [i for i in range(n_f) if i != j]
    F_target = PolyMatrix(model.F.coeffs[:, :, [j]])
    F_rest = PolyMatrix(model.F.coeffs[:, :, others])
    H_new = model.H.hstack(F_rest)
    E_old = model.E
    n_x = model.n_x

    def E(x):
        return E_old(np.asarray(x)[:n_x])

    origin = dict(model.origin or {})
    origin["isolated_target"] = target
    return NonlinearDaeModel(H_new, model.L, F_target, E, origin)


@dataclass(frozen=True, eq=False)
class StackedSystem:
    """Block-Toeplitz coefficient matrices so that ``N(p)H(p) = 0`` reads ``Nbar @ Hbar = 0``.

    ``Nbar = [N_0 N_1 ... N_dN]`` (power-major blocks, channels inside each block).
    """

    Hbar: np.ndarray
    Fbar: np.ndarray
    d_N: int
    n_r: int
    d_H: int
    d_F: int

    @property
    def n_f(self) -> int:
        return self.Fbar.shape[1] // (self.d_N + self.d_F + 1)

    @property
    def m(self) -> int:
        """Number of sensitivity coordinates (columns of ``Fbar``)."""
        return self.Fbar.shape[1]

    @property
    def dim(self) -> int:
        return self.n_r * (self.d_N + 1)


def _toeplitz_stack(M: PolyMatrix, d_N: int) -> np.ndarray:
    n_r, n_c = M.shape
    d_M = M.degree
    out = np.zeros((n_r * (d_N + 1), n_c * (d_N + d_M + 1)))
    for i in range(d_N + 1):
        for k in range(d_M + 1):
            out[i * n_r:(i + 1) * n_r, (i + k) * n_c:(i + k + 1) * n_c] = M.coeffs[k]
    return out


def stack_system(H: PolyMatrix, F: PolyMatrix, d_N: int) -> StackedSystem:
    """Build ``Hbar`` and ``Fbar`` for numerator degree ``d_N``.

    Block row ``i`` holds ``H_0 .. H_dH`` shifted ``i`` block columns to the right.
    """
    if d_N < 0:
        raise ValueError("d_N must be nonnegative")
    if H.rows != F.rows:
        raise DimensionError(f"H has {H.rows} rows but F has {F.rows}")
    return StackedSystem(_toeplitz_stack(H, d_N), _toeplitz_stack(F, d_N), d_N, H.rows,
                         H.degree, F.degree)


@dataclass(frozen=True)
class DetectabilityReport:
    detectable: bool
    rank_HF: tuple
    rank_H: tuple
    points: tuple

    def __bool__(self):
        return self.detectable

    def summary(self) -> str:
        rows = [f"  s={s.real:+.4f}{s.imag:+.4f}j  rank[H F]={a}  rank H={b}"
                for s, a, b in zip(self.points, self.rank_HF, self.rank_H)]
        verdict = "detectable" if self.detectable else "NOT detectable"
        return "\n".join([f"fault {verdict} (majority over {len(self.points)} points)"] + rows)


def _numeric_rank(M: np.ndarray, rtol: float) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0]))


def detectability_check(H: PolyMatrix, F: PolyMatrix, n_points: int = 5, seed: int = 0,
                        rtol: float = 1e-8) -> DetectabilityReport:
    """Generic rank test ``rank [H(s) F(s)] > rank H(s)`` at random complex points.

    Points are drawn from the annulus ``0.5 <= |s| <= 2`` away from the real
    axis; the verdict is a majority vote over the points.
    """
    if H.rows != F.rows:
        raise DimensionError(f"H has {H.rows} rows but F has {F.rows}")
    rng = np.random.default_rng(seed)
    radius = rng.uniform(0.5, 2.0, n_points)
    angle = rng.uniform(np.pi / 12, 11 * np.pi / 12, n_points) * rng.choice([-1.0, 1.0], n_points)
    points = radius * np.exp(1j * angle)
    HF = H.hstack(F)
    r_hf, r_h = [], []
    for s in points:
        r_hf.append(_numeric_rank(eval_poly_matrix(HF, s), rtol))
        r_h.append(_numeric_rank(eval_poly_matrix(H, s), rtol))
    votes = sum(a > b for a, b in zip(r_hf, r_h))
    return DetectabilityReport(votes * 2 > n_points, tuple(r_hf), tuple(r_h),
                               tuple(complex(s) for s in points))
