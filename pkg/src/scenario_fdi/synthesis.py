"""Convex synthesis of residual-generator numerators.

Every program shares the residual-generator condition ``Nbar Hbar = 0`` and a
sensitivity condition ``||Nbar Fbar||_inf >= 1``. The sensitivity condition is
split into ``2m`` convex branches ``(j, +): Nbar Fbar v_j >= 1`` and
``(j, -): Nbar Fbar v_j <= -1``, where ``m`` is the number of columns of
``Fbar``. The equality is eliminated once with an orthonormal basis ``Z`` of the
left null space of ``Hbar``: ``Nbar = (Z y)^T``, ``Nbar Fbar v_j = c_j^T y``
with ``c = Z^T Fbar``.

Solvers
-------
* linear programs go to HiGHS through :func:`scipy.optimize.linprog`;
* a quadratic form under a single linear constraint is minimized in closed form
  from its eigendecomposition;
* programs with quadratic constraints are second-order cone programs solved by
  CLARABEL through cvxpy.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .dae import NonlinearDaeModel, StackedSystem, stack_system
from .errors import AllBranchesInfeasible, DimensionError, ImproperTransferFunction, \
    NonPsdInput, Stage2Infeasible
from .lti import check_stable
from .polymatrix import PolyMatrix, scalar_poly
from .signature import SignatureMatrix

__all__ = [
    "FilterCoefficients",
    "SynthesisResult",
    "ScenarioParams",
    "PayoffSpec",
    "Branch",
    "lp_branches",
    "feasible_filter",
    "max_sensitivity_filter",
    "robust_filter_qp",
    "two_stage_average",
    "two_stage_chance",
    "sample_complexity",
    "null_space_basis",
]

NULL_RTOL = 1e-10
TIE_RTOL = 1e-9
PSD_RTOL = 1e-8
CERT_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class FilterCoefficients:
    """Numerator row ``Nbar = [N_0 ... N_dN]`` and scalar denominator ``a(p)``."""

    Nbar: np.ndarray
    d_N: int
    a: PolyMatrix

    def __post_init__(self):
        Nbar = np.array(self.Nbar, dtype=float).ravel()
        if Nbar.size % (self.d_N + 1):
            raise DimensionError(f"length {Nbar.size} is not a multiple of d_N + 1 = {self.d_N + 1}")
        a = self.a if isinstance(self.a, PolyMatrix) else scalar_poly(self.a)
        if a.shape != (1, 1):
            raise DimensionError("denominator must be 1x1")
        a = a.trimmed()
        check_stable(a.coeffs[:, 0, 0])
        if a.degree < self.d_N:
            raise ImproperTransferFunction(f"deg a = {a.degree} < d_N = {self.d_N}")
        Nbar.setflags(write=False)
        object.__setattr__(self, "Nbar", Nbar)
        object.__setattr__(self, "a", a)

    @property
    def n_r(self) -> int:
        return self.Nbar.size // (self.d_N + 1)

    @property
    def a_coeffs(self) -> np.ndarray:
        return self.a.coeffs[:, 0, 0]

    @property
    def N(self) -> PolyMatrix:
        """Numerator as a ``1 x n_r`` polynomial matrix."""
        return PolyMatrix(self.Nbar.reshape(self.d_N + 1, 1, self.n_r))

    def scaled(self, factor: float) -> "FilterCoefficients":
        return FilterCoefficients(self.Nbar * factor, self.d_N, self.a)

    def residual_norms(self, stacked: StackedSystem) -> tuple[float, float]:
        """``(||Nbar Hbar||_inf, ||Nbar Fbar||_inf)``."""
        return (float(np.max(np.abs(self.Nbar @ stacked.Hbar), initial=0.0)),
                float(np.max(np.abs(self.Nbar @ stacked.Fbar), initial=0.0)))


@dataclass(frozen=True)
class Branch:
    j: int        # 1-based column of Fbar
    sign: int     # +1 or -1

    def __str__(self):
        return f"({self.j},{'+' if self.sign > 0 else '-'})"


@dataclass(eq=False)
class SynthesisResult:
    """Outcome of one synthesis program.

    ``gamma_star`` is the stage-1 optimal value for the two-stage programs and
    the quadratic objective for :func:`robust_filter_qp`; it is ``nan`` for
    programs without a quadratic objective.
    """

    filter: FilterCoefficients
    gamma_star: float
    stage1_gamma: float
    active_branch: Branch
    perspective: str
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ScenarioParams:
    epsilon: float
    beta: float
    n_r: int
    n_f: int
    d_N: int
    d_F: int = 0

    def __post_init__(self):
        for name in ("epsilon", "beta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v}")
        for name in ("n_r", "n_f"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("d_N", "d_F"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class PayoffSpec:
    """Payoff ``J(alpha)``: ``square`` is ``alpha**2``, ``linear`` is ``alpha``."""

    kind: str = "square"

    def __post_init__(self):
        if self.kind not in ("square", "linear"):
            raise ValueError(f"unknown payoff {self.kind!r}")

    def __call__(self, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return alpha ** 2 if self.kind == "square" else alpha


def sample_complexity(params: ScenarioParams) -> int:
    """Smallest ``n`` with ``n >= (2/eps) (ln(m/beta) + n_r (d_N+1) + 1)``, ``m = n_f (d_F + d_N + 1)``."""
    m = params.n_f * (params.d_F + params.d_N + 1)
    bound = (2.0 / params.epsilon) * (math.log(m / params.beta) + params.n_r * (params.d_N + 1) + 1)
    n = math.ceil(bound)
    # guard against the bound landing a rounding error above an integer
    if n - 1 >= bound:
        n -= 1
    return max(n, 1)


def lp_branches(stacked: StackedSystem) -> list[Branch]:
    """All ``2m`` branches in the fixed order ``(1,+), (1,-), (2,+), ...``."""
    return [Branch(j, s) for j in range(1, stacked.m + 1) for s in (1, -1)]


def null_space_basis(Hbar: np.ndarray, rtol: float = NULL_RTOL) -> np.ndarray:
    """Orthonormal ``Z`` (columns) spanning ``{v : v^T Hbar = 0}``."""
    n = Hbar.shape[0]
    if Hbar.size == 0:
        return np.eye(n)
    U, s, _ = np.linalg.svd(Hbar, full_matrices=True)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, rank:]


@dataclass(frozen=True, eq=False)
class _Reduced:
    stacked: StackedSystem
    Z: np.ndarray
    c: np.ndarray          # (r, m)
    live: np.ndarray       # bool mask of columns j where c_j is numerically nonzero

    @property
    def r(self) -> int:
        return self.Z.shape[1]


def _prepare(model: NonlinearDaeModel, d_N: int, a) -> tuple[_Reduced, PolyMatrix]:
    a = a if isinstance(a, PolyMatrix) else scalar_poly(a)
    a = a.trimmed()
    check_stable(a.coeffs[:, 0, 0])
    if a.degree < d_N:
        raise ImproperTransferFunction(f"deg a = {a.degree} < d_N = {d_N}")
    stacked = stack_system(model.H, model.F, d_N)
    Z = null_space_basis(stacked.Hbar)
    c = Z.T @ stacked.Fbar
    scale = max(np.linalg.norm(stacked.Fbar, 2) if stacked.Fbar.size else 0.0, 1.0)
    live = np.linalg.norm(c, axis=0) > 1e-10 * scale if c.size else np.zeros(stacked.m, bool)
    return _Reduced(stacked, Z, c, live), a


def _pick(values, maximize: bool):
    """Index of the best finite value; ties within ``TIE_RTOL`` go to the lowest index."""
    vals = np.asarray(values, dtype=float)
    ok = np.isfinite(vals)
    if not ok.any():
        return None
    best = np.max(vals[ok]) if maximize else np.min(vals[ok])
    tol = TIE_RTOL * max(abs(best), 1e-300)
    for i, v in enumerate(vals):
        if ok[i] and abs(v - best) <= tol:
            return i
    return int(np.flatnonzero(ok)[0])


def _normalize(Nbar, stacked: StackedSystem, branch: Branch) -> np.ndarray:
    """Scale so the branch coordinate of ``Nbar Fbar`` is at least one (exactly, in floating point)."""
    v = float(Nbar @ stacked.Fbar[:, branch.j - 1]) * branch.sign
    if v <= 0:
        raise Stage2Infeasible("branch coordinate has the wrong sign")
    if v < 1.0:
        Nbar = Nbar / v
        # one more nudge if rounding left it a hair below one
        v2 = float(Nbar @ stacked.Fbar[:, branch.j - 1]) * branch.sign
        if v2 < 1.0:
            Nbar = Nbar * (1.0 / v2) * (1.0 + 4e-16)
    return Nbar


def _check_square(Q: np.ndarray, dim: int, what="Q") -> np.ndarray:
    Q = np.asarray(Q.Q if isinstance(Q, SignatureMatrix) else Q, dtype=float)
    if Q.shape != (dim, dim):
        raise DimensionError(f"{what} has shape {Q.shape}, expected ({dim}, {dim})")
    Q = 0.5 * (Q + Q.T)
    w = np.linalg.eigvalsh(Q) if dim else np.zeros(0)
    scale = np.max(np.abs(w), initial=0.0)
    if w.size and w[0] < -PSD_RTOL * scale:
        raise NonPsdInput(f"{what} has eigenvalue {w[0]:.3e} below -{PSD_RTOL:g} * {scale:.3e}")
    return Q


def _stacked_result(red, Nbar, d_N, a, branch, perspective, gamma, gamma1, diag):
    filt = FilterCoefficients(Nbar, d_N, a)
    h, f = filt.residual_norms(red.stacked)
    diag = dict(diag)
    diag.update(null_residual=h, sensitivity=f, null_dim=red.r, m=red.stacked.m)
    # quadratic forms of PSD matrices can round to tiny negatives
    return SynthesisResult(filt, max(float(gamma), 0.0), max(float(gamma1), 0.0), branch,
                           perspective, diag)


# ---------------------------------------------------------------------------
# linear programs
# ---------------------------------------------------------------------------

def _lp_min_inf_norm(Z, cj):
    """``min ||Z y||_inf`` s.t. ``c_j^T y >= 1``; variables ``(y, t)``."""
    n, r = Z.shape
    obj = np.zeros(r + 1)
    obj[-1] = 1.0
    ones = np.ones((n, 1))
    A_ub = np.vstack([np.hstack([Z, -ones]), np.hstack([-Z, -ones]), np.append(-cj, 0.0)[None]])
    b_ub = np.concatenate([np.zeros(2 * n), [-1.0]])
    bounds = [(None, None)] * r + [(0, None)]
    return linprog(obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")


def _lp_max_sensitivity(Z, cj):
    """``max c_j^T y`` s.t. ``-1 <= Z y <= 1``."""
    n, r = Z.shape
    A_ub = np.vstack([Z, -Z])
    b_ub = np.ones(2 * n)
    return linprog(-cj, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * r, method="highs")


def feasible_filter(model: NonlinearDaeModel, d_N: int, a) -> FilterCoefficients:
    """Any residual generator with ``||Nbar Fbar||_inf >= 1``; the first feasible branch wins.

    Each branch minimizes ``||Nbar||_inf`` so the returned numerator has the
    smallest coefficients that reach the sensitivity level on that branch.

    Raises
    ------
    AllBranchesInfeasible
        If no branch is feasible (fault not detectable with this ``d_N``).
    """
    red, a = _prepare(model, d_N, a)
    for br in lp_branches(red.stacked):
        if red.r == 0 or not red.live[br.j - 1]:
            continue
        res = _lp_min_inf_norm(red.Z, br.sign * red.c[:, br.j - 1])
        if res.status != 0:
            continue
        Nbar = _normalize(red.Z @ res.x[:-1], red.stacked, br)
        return FilterCoefficients(Nbar, d_N, a)
    raise AllBranchesInfeasible(f"no branch admits N Hbar = 0 with a sensitive coordinate (d_N={d_N})")


def max_sensitivity_filter(model: NonlinearDaeModel, d_N: int, a) -> SynthesisResult:
    """Residual generator maximizing a coordinate of ``Nbar Fbar`` under ``||Nbar||_inf <= 1``.

    Only the ``(j, +)`` branches are solved since ``Nbar -> -Nbar`` maps one
    sign onto the other. The winning ``Nbar`` is divided by ``||Nbar Fbar||_inf``
    so that its sensitivity is exactly one; the raw optimal value is kept in
    ``diagnostics["objective"]``.
    """
    red, a = _prepare(model, d_N, a)
    m = red.stacked.m
    vals = np.full(m, -np.inf)
    sols = [None] * m
    t0 = time.perf_counter()
    for j in range(m):
        if red.r == 0 or not red.live[j]:
            continue
        res = _lp_max_sensitivity(red.Z, red.c[:, j])
        if res.status == 0:
            vals[j] = -res.fun
            sols[j] = res.x
    idx = _pick(vals, maximize=True)
    if idx is None or vals[idx] <= 1e-12:
        raise AllBranchesInfeasible("fault signal cannot reach the residual (zero sensitivity)")
    br = Branch(idx + 1, 1)
    Nbar = red.Z @ sols[idx]
    Nbar = Nbar / np.max(np.abs(Nbar @ red.stacked.Fbar))
    Nbar = _normalize(Nbar, red.stacked, br)
    diag = {"objective": float(vals[idx]), "branch_objectives": vals.tolist(),
            "solve_seconds": time.perf_counter() - t0}
    return _stacked_result(red, Nbar, d_N, a, br, "approach1", float("nan"), float("nan"), diag)


# ---------------------------------------------------------------------------
# quadratic programs
# ---------------------------------------------------------------------------

def _qp_single(P, cj):
    """``min y^T P y`` s.t. ``c_j^T y >= 1`` for PSD ``P``; returns ``(value, y)``.

    If ``c_j`` has a component outside the range of ``P`` the value is zero and
    ``y`` points along that component; otherwise ``y = P^+ c / (c^T P^+ c)``.
    """
    w, V = np.linalg.eigh(P)
    lam_max = max(w[-1], 0.0) if w.size else 0.0
    ct = V.T @ cj
    zero = w <= 1e-12 * lam_max if lam_max > 0 else np.ones_like(w, bool)
    c_null = ct * zero
    if np.linalg.norm(c_null) > 1e-9 * np.linalg.norm(ct):
        y = V @ c_null
        y = y / (cj @ y)
        return max(float(y @ P @ y), 0.0), y
    z = np.where(zero, 0.0, ct / np.where(zero, 1.0, w))
    denom = float(ct @ z)
    y = V @ z / denom
    return max(float(y @ P @ y), 0.0), y


def _robust_core(red: _Reduced, Q: np.ndarray):
    P = red.Z.T @ Q @ red.Z
    P = 0.5 * (P + P.T)
    m = red.stacked.m
    vals = np.full(m, np.inf)
    ys = [None] * m
    for j in range(m):
        if red.r == 0 or not red.live[j]:
            continue
        vals[j], ys[j] = _qp_single(P, red.c[:, j])
    idx = _pick(vals, maximize=False)
    if idx is None:
        raise AllBranchesInfeasible("no branch admits a sensitive residual generator")
    br = Branch(idx + 1, 1)
    Nbar = _normalize(red.Z @ ys[idx], red.stacked, br)
    return Nbar, br, vals


def robust_filter_qp(model: NonlinearDaeModel, d_N: int, a, Q) -> SynthesisResult:
    """Minimize ``Nbar Q Nbar^T`` over all branches.

    Returns the minimizer with ``gamma_star`` equal to its quadratic form.

    Raises
    ------
    NonPsdInput
        If ``Q`` has an eigenvalue below ``-1e-8 ||Q||_2``.
    """
    red, a = _prepare(model, d_N, a)
    Q = _check_square(Q, red.stacked.dim)
    t0 = time.perf_counter()
    Nbar, br, vals = _robust_core(red, Q)
    gamma = float(Nbar @ Q @ Nbar)
    diag = {"branch_objectives": vals.tolist(), "solve_seconds": time.perf_counter() - t0}
    return _stacked_result(red, Nbar, d_N, a, br, "qp", gamma, gamma, diag)


def _psd_factor(Q: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = Q`` (negative rounding eigenvalues clipped)."""
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    keep = w > 1e-14 * max(w[-1], 0.0) if w.size else np.zeros(0, bool)
    return V[:, keep] * np.sqrt(w[keep])


def _solve_cvx(problem):
    import cvxpy as cp

    # inaccurate solutions are accepted here because every candidate is
    # re-checked against the certificate afterwards
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="Solution may be inaccurate")
        try:
            problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
        except cp.SolverError:
            try:
                problem.solve(solver=cp.CLARABEL)
            except cp.SolverError:
                return False
    return problem.status in ("optimal", "optimal_inaccurate")


def _stage2(red: _Reduced, factors, radius: float):
    """``max c_j^T y`` s.t. ``|Z y| <= 1`` and ``||L_i^T y||_2 <= radius`` for every factor."""
    import cvxpy as cp

    m = red.stacked.m
    vals = np.full(m, -np.inf)
    ys = [None] * m
    y = cp.Variable(red.r)
    cpar = cp.Parameter(red.r)
    cons = [cp.abs(red.Z @ y) <= 1]
    for Lt in factors:
        if Lt.shape[0] == 0:
            continue
        if radius <= 0:
            cons.append(Lt @ y == 0)
        else:
            cons.append(cp.norm(Lt @ y, 2) <= radius)
    prob = cp.Problem(cp.Maximize(cpar @ y), cons)
    for j in range(m):
        if red.r == 0 or not red.live[j]:
            continue
        cpar.value = red.c[:, j]
        if _solve_cvx(prob) and y.value is not None:
            vals[j] = float(red.c[:, j] @ y.value)
            ys[j] = np.array(y.value)
    return vals, ys


def _two_stage_finish(red, d_N, a, Qs, Nbar1, br1, gamma1, agg, perspective, diag):
    """Run stage 2 and return the certified result.

    The stage-2 optimizer ``N2`` is reported as ``||N1||_inf * N2``: its
    aggregated quadratic form is at most ``gamma1`` and its sensitivity is at
    least one. ``N1`` is returned instead if stage 2 fails either check.
    """
    n1_inf = float(np.max(np.abs(Nbar1)))
    Zs = [red.Z.T @ Q @ red.Z for Q in Qs]
    scale = max(max(np.linalg.norm(P, 2) for P in Zs), 1e-300)
    factors = [_psd_factor(P / scale).T for P in Zs]
    radius = math.sqrt(max(gamma1, 0.0) / scale) / n1_inf
    t0 = time.perf_counter()
    vals, ys = _stage2(red, factors, radius)
    diag = dict(diag, stage2_seconds=time.perf_counter() - t0, stage2_objectives=vals.tolist())
    idx = _pick(vals, maximize=True)
    fallback = None
    if idx is None:
        fallback = "stage-2 infeasible"
    else:
        br2 = Branch(idx + 1, 1)
        N2 = red.Z @ ys[idx]
        cand = n1_inf * N2
        sens = float(cand @ red.stacked.Fbar[:, idx])
        value = agg(cand)
        diag["stage2_objective"] = float(vals[idx])
        if sens < 1.0 - 1e-9:
            fallback = f"stage-2 sensitivity {sens:.3e} below one"
        elif value > gamma1 * (1 + CERT_RTOL) + 1e-14 * scale:
            fallback = f"stage-2 payoff {value:.6e} exceeds gamma1 {gamma1:.6e}"
        else:
            if sens < 1.0:
                cand = cand / sens
            if agg(cand) > gamma1 * (1 + CERT_RTOL):
                fallback = "stage-2 certificate lost in normalization"
    if fallback is not None:
        diag.update(stage2_fallback=True, stage2_reason=fallback, normalization=1.0)
        return _stacked_result(red, Nbar1, d_N, a, br1, perspective, gamma1, gamma1, diag)
    diag.update(stage2_fallback=False, normalization=n1_inf)
    return _stacked_result(red, cand, d_N, a, br2, perspective, gamma1, gamma1, diag)


def _scenario_mats(scenarios, dim) -> list[np.ndarray]:
    if len(scenarios) == 0:
        raise ValueError("at least one scenario is required")
    return [_check_square(Q, dim, f"scenario {i}") for i, Q in enumerate(scenarios)]


def two_stage_average(model: NonlinearDaeModel, d_N: int, a, scenarios: Sequence,
                      J: PayoffSpec = PayoffSpec("square"), stage2: bool = True) -> SynthesisResult:
    """Average-performance design: minimize the mean payoff, then maximize sensitivity.

    Stage 1 minimizes ``Nbar Qbar Nbar^T`` with ``Qbar`` the scenario mean, so
    its cost does not grow with the number of scenarios once ``Qbar`` is
    formed. Stage 2 maximizes ``Nbar Fbar v_j`` under ``||Nbar||_inf <= 1`` and
    ``||N1||_inf^2 Nbar Qbar Nbar^T <= gamma1``.
    """
    if J.kind != "square":
        raise NotImplementedError("only the square payoff J(alpha) = alpha**2 is supported")
    red, a = _prepare(model, d_N, a)
    Qs = _scenario_mats(scenarios, red.stacked.dim)
    t0 = time.perf_counter()
    Qbar = np.mean(Qs, axis=0)
    Nbar1, br1, vals = _robust_core(red, Qbar)
    gamma1 = float(Nbar1 @ Qbar @ Nbar1)
    diag = {"stage1_objectives": vals.tolist(), "stage1_seconds": time.perf_counter() - t0,
            "n_scenarios": len(Qs)}
    if not stage2:
        diag.update(stage2_fallback=None, normalization=1.0)
        return _stacked_result(red, Nbar1, d_N, a, br1, "ap", gamma1, gamma1, diag)
    return _two_stage_finish(red, d_N, a, [Qbar], Nbar1, br1, gamma1,
                             lambda N: float(N @ Qbar @ N), "ap", diag)


def _chance_stage1(red: _Reduced, Qs):
    """Per branch ``min t`` s.t. ``c_j^T y >= 1`` and ``||L_i^T y|| <= t``; value ``t^2``."""
    import cvxpy as cp

    Ps = [red.Z.T @ Q @ red.Z for Q in Qs]
    scale = max(max(np.linalg.norm(P, 2) for P in Ps), 1e-300)
    factors = [_psd_factor(P / scale).T for P in Ps]
    m = red.stacked.m
    vals = np.full(m, np.inf)
    ys = [None] * m
    y = cp.Variable(red.r)
    t = cp.Variable()
    cpar = cp.Parameter(red.r)
    cons = [cpar @ y >= 1] + [cp.norm(Lt @ y, 2) <= t for Lt in factors if Lt.shape[0]]
    prob = cp.Problem(cp.Minimize(t), cons)
    for j in range(m):
        if red.r == 0 or not red.live[j]:
            continue
        cpar.value = red.c[:, j]
        if _solve_cvx(prob) and y.value is not None:
            yj = np.array(y.value)
            yj = yj / max(float(red.c[:, j] @ yj), 1e-300)
            ys[j] = yj
            vals[j] = max(float(yj @ P @ yj) for P in Ps)
    return vals, ys


def two_stage_chance(model: NonlinearDaeModel, d_N: int, a, scenarios: Sequence,
                     stage2: bool = True) -> SynthesisResult:
    """Chance-performance design: minimize the worst scenario payoff, then maximize sensitivity.

    Stage 1 is the epigraph program ``min gamma`` s.t. ``Nbar Q_i Nbar^T <= gamma``
    for every scenario. Stage 2 keeps ``||N1||_inf^2 max_i Nbar Q_i Nbar^T <= gamma1``.
    """
    red, a = _prepare(model, d_N, a)
    Qs = _scenario_mats(scenarios, red.stacked.dim)
    t0 = time.perf_counter()
    if len(Qs) == 1:
        Nbar1, br1, vals = _robust_core(red, Qs[0])
    else:
        vals, ys = _chance_stage1(red, Qs)
        idx = _pick(vals, maximize=False)
        if idx is None:
            raise AllBranchesInfeasible("no branch admits a sensitive residual generator")
        br1 = Branch(idx + 1, 1)
        Nbar1 = _normalize(red.Z @ ys[idx], red.stacked, br1)

    def worst(N):
        return max(float(N @ Q @ N) for Q in Qs)

    gamma1 = worst(Nbar1)
    diag = {"stage1_objectives": np.asarray(vals).tolist(),
            "stage1_seconds": time.perf_counter() - t0, "n_scenarios": len(Qs)}
    if not stage2:
        diag.update(stage2_fallback=None, normalization=1.0)
        return _stacked_result(red, Nbar1, d_N, a, br1, "cp", gamma1, gamma1, diag)
    return _two_stage_finish(red, d_N, a, Qs, Nbar1, br1, gamma1, worst, "cp", diag)
