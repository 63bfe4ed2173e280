"""Two-area multi-machine frequency model with primary control and AGC.

States ``X = [delta (g), f (g), P_m (g), dP_agc (2)]``, outputs
``Y = [f, P_m]``, disturbances ``d = dP_load`` at the generator nodes and a
scalar attack ``f`` added to the area-1 AGC signal. Powers are in MW,
frequencies in Hz, angles in rad.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import root

from ..dae import OdeSystem, linearize
from ..errors import ConvergenceError, DimensionError, SimulationDiverged, StiffnessError
from .network import KronReduction, Line, assemble_admittance, kron_reduce, line_flow

__all__ = [
    "GeneratorData",
    "AgcData",
    "PowerSystemConfig",
    "default_config",
    "build_two_area_model",
    "find_equilibrium",
    "simulate",
    "Trajectory",
    "state_labels",
    "output_labels",
]


@dataclass(frozen=True)
class GeneratorData:
    """One machine. ``D`` and ``S`` are in Hz/MW so ``(f - f0)/D`` and ``(f - f0)/S`` are MW."""

    H: float            # inertia constant (s)
    S_B: float          # rating (MVA)
    D: float            # load damping (Hz/MW)
    S: float            # droop (Hz/MW)
    T_ch: float         # turbine time constant (s)
    area: int           # 1 or 2
    bus: int            # terminal bus (0-based network index)
    xd: float = 0.3     # transient reactance on own base (pu)
    E: float = 1.1      # internal voltage magnitude (pu)
    v: float = 1.0      # primary-control participation
    w: float = 1.0      # AGC participation

    def __post_init__(self):
        for name in ("H", "S_B", "D", "S", "T_ch", "xd", "E"):
            if not getattr(self, name) > 0:
                raise ValueError(f"generator {name} must be positive")
        if self.area not in (1, 2):
            raise ValueError("area must be 1 or 2")


@dataclass(frozen=True)
class AgcData:
    """Area controller: ``dP_agc' = sum c (f - f0) + sum b (P_m - P_e - dP_load) - g/T_N - C_p h - K/T_N (dP_agc - sat)``."""

    T_N: float = 20.0
    C_p: float = 0.1
    K: float = 1.0
    bias: Optional[float] = None   # frequency bias (MW/Hz); defaults to the area's natural response
    c: Optional[tuple] = None      # per-generator gains; derived from bias and T_N when None
    b: Optional[tuple] = None


@dataclass(frozen=True)
class PowerSystemConfig:
    """Desk-scale two-area system description.

    ``dispatch`` fixes the mechanical power of every machine but the first
    (the slack); the equilibrium angles follow from a load-flow solve.
    """

    generators: tuple
    n_bus: int
    lines: tuple
    tie_lines: tuple                 # indices into ``lines``; each oriented from area 1 to area 2
    load_shunts: tuple               # per-bus shunt admittance (pu), constant-impedance loads
    dispatch: tuple                  # MW for generators 2..g
    agc: tuple = (AgcData(), AgcData())
    f0: float = 50.0
    S_base: float = 100.0
    p_limit: float = 1e4             # primary-control saturation (MW, symmetric)
    agc_limit: float = 1e4           # AGC saturation (MW, symmetric)

    def __post_init__(self):
        areas = {gen.area for gen in self.generators}
        if areas != {1, 2}:
            raise ValueError("both areas need at least one generator")
        if not self.tie_lines:
            raise ValueError("at least one tie line is required")
        if len(self.dispatch) != len(self.generators) - 1:
            raise DimensionError("dispatch needs one value per non-slack generator")
        if len(self.load_shunts) != self.n_bus:
            raise DimensionError("one load shunt per network bus is required")
        if len(self.agc) != 2:
            raise DimensionError("one AGC block per area is required")
        for gen in self.generators:
            if not 0 <= gen.bus < self.n_bus:
                raise DimensionError(f"generator bus {gen.bus} outside the network")
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")

    @property
    def g(self) -> int:
        return len(self.generators)

    def area_members(self, k: int) -> list[int]:
        return [i for i, gen in enumerate(self.generators) if gen.area == k]


def default_config(**overrides) -> PowerSystemConfig:
    """Three machines: generators 1 and 2 in area 1, generator 3 in area 2, one lossless tie line.

    Buses 0-2 are generator terminals, bus 3 is the area-1 load bus and bus 4
    the area-2 load bus; the tie line joins buses 3 and 4.
    """
    gens = (
        GeneratorData(H=6.0, S_B=400.0, D=1 / (0.02 * 400.0), S=0.05 * 50 / 400.0, T_ch=0.3,
                      area=1, bus=0, w=400 / 750),
        GeneratorData(H=5.0, S_B=350.0, D=1 / (0.02 * 350.0), S=0.05 * 50 / 350.0, T_ch=0.35,
                      area=1, bus=1, w=350 / 750),
        GeneratorData(H=5.5, S_B=450.0, D=1 / (0.02 * 450.0), S=0.05 * 50 / 450.0, T_ch=0.4,
                      area=2, bus=2, w=1.0),
    )
    lines = (
        Line(0, 3, r=0.004, x=0.05),
        Line(1, 3, r=0.005, x=0.06),
        Line(2, 4, r=0.004, x=0.04),
        Line(3, 4, r=0.0, x=0.3),
    )
    # heavy import into area 2 over a weak tie: about 46 degrees between the areas
    shunts = (0j, 0j, 0j, complex(4.0, -1.0), complex(6.0, -1.2))
    cfg = PowerSystemConfig(gens, 5, lines, (3,), shunts, dispatch=(230.0, 270.0))
    return replace(cfg, **overrides) if overrides else cfg


def state_labels(g: int) -> list[str]:
    return ([f"delta{i + 1}" for i in range(g)] + [f"f{i + 1}" for i in range(g)]
            + [f"Pm{i + 1}" for i in range(g)] + ["dPagc1", "dPagc2"])


def output_labels(g: int) -> list[str]:
    return [f"f{i + 1}" for i in range(g)] + [f"Pm{i + 1}" for i in range(g)]


def _network(cfg: PowerSystemConfig) -> KronReduction:
    g = cfg.g
    n = g + cfg.n_bus
    lines = [Line(ln.i + g, ln.j + g, ln.r, ln.x, ln.b) for ln in cfg.lines]
    for i, gen in enumerate(cfg.generators):
        lines.append(Line(i, g + gen.bus, 0.0, gen.xd * cfg.S_base / gen.S_B))
    shunts = np.concatenate([np.zeros(g, dtype=complex), np.asarray(cfg.load_shunts, dtype=complex)])
    return kron_reduce(assemble_admittance(n, lines, shunts), g)


class _Physics:
    """Vectorized evaluation of electric power, tie flows and their time derivatives."""

    def __init__(self, cfg: PowerSystemConfig):
        self.cfg = cfg
        self.kron = _network(cfg)
        self.Emag = np.array([gen.E for gen in cfg.generators])
        self.tie = [cfg.lines[i] for i in cfg.tie_lines]

    def internal_voltages(self, delta):
        return self.Emag.reshape((-1,) + (1,) * (delta.ndim - 1)) * np.exp(1j * delta)

    def electric_power(self, delta):
        """MW delivered by each machine, shape of ``delta``."""
        E = self.internal_voltages(delta)
        I = np.tensordot(self.kron.Y_red, E, axes=1)
        return self.cfg.S_base * np.real(E * np.conj(I))

    def tie_flows(self, delta, dot_delta=None):
        """Area-1 export over every tie line (MW) and optionally its time derivative."""
        E = self.internal_voltages(delta)
        V = np.tensordot(self.kron.M, E, axes=1)
        flows, rates = [], []
        if dot_delta is not None:
            Vdot = np.tensordot(self.kron.M, 1j * dot_delta * E, axes=1)
        for ln in self.tie:
            Va, Vb = V[ln.i], V[ln.j]
            flows.append(self.cfg.S_base * line_flow(Va, Vb, ln.y, ln.b))
            if dot_delta is not None:
                Ia = (Va - Vb) * ln.y + 0.5j * ln.b * Va
                Ia_dot = (Vdot[ln.i] - Vdot[ln.j]) * ln.y + 0.5j * ln.b * Vdot[ln.i]
                rates.append(self.cfg.S_base * np.real(Vdot[ln.i] * np.conj(Ia) + Va * np.conj(Ia_dot)))
        if dot_delta is None:
            return np.stack(flows)
        return np.stack(flows), np.stack(rates)


def _solve_angles(phys: _Physics, cfg: PowerSystemConfig) -> np.ndarray:
    target = np.asarray(cfg.dispatch, dtype=float)
    g = cfg.g

    def resid(d_rest):
        delta = np.concatenate([[0.0], d_rest])
        return phys.electric_power(delta)[1:] - target

    # success flags are unreliable at tight tolerances; judge by the residual
    sol = root(resid, np.zeros(g - 1), method="hybr", tol=1e-13)
    delta = np.concatenate([[0.0], sol.x])
    if np.max(np.abs(resid(sol.x)), initial=0.0) > 1e-8:
        raise ConvergenceError("load flow for the requested dispatch did not converge",
                               best=delta, residual=float(np.max(np.abs(resid(sol.x)), initial=0.0)))
    return delta


def build_two_area_model(cfg: Optional[PowerSystemConfig] = None) -> OdeSystem:
    """Drift, input matrices and output map of the two-area model.

    The returned system carries its equilibrium ``X_e`` (synchronous frequency,
    the dispatch of ``cfg``, AGC at rest) and the scheduled tie flows used in
    the AGC error.
    """
    cfg = cfg or default_config()
    g = cfg.g
    f0 = cfg.f0
    phys = _Physics(cfg)
    gens = cfg.generators
    H = np.array([gen.H for gen in gens])
    S_B = np.array([gen.S_B for gen in gens])
    Dd = np.array([gen.D for gen in gens])
    S = np.array([gen.S for gen in gens])
    T_ch = np.array([gen.T_ch for gen in gens])
    v = np.array([gen.v for gen in gens])
    w = np.array([gen.w for gen in gens])
    area = np.array([gen.area for gen in gens])
    inertia = f0 / (2.0 * H * S_B)

    delta_e = _solve_angles(phys, cfg)
    P_m0 = phys.electric_power(delta_e)
    sched = phys.tie_flows(delta_e)

    members = [cfg.area_members(1), cfg.area_members(2)]
    c_gain = np.zeros((2, g))
    b_gain = np.zeros((2, g))
    T_N = np.array([cfg.agc[k].T_N for k in range(2)])
    C_p = np.array([cfg.agc[k].C_p for k in range(2)])
    K = np.array([cfg.agc[k].K for k in range(2)])
    for k in range(2):
        ag = cfg.agc[k]
        idx = members[k]
        bias = ag.bias if ag.bias is not None else float(np.sum(1 / S[idx] + 1 / Dd[idx]))
        if ag.c is not None:
            c_gain[k, idx] = ag.c
        else:
            c_gain[k, idx] = -bias / (T_N[k] * len(idx))
        if ag.b is not None:
            b_gain[k, idx] = ag.b
        else:
            # proportional action on the area frequency: b (P_m - P_e - dP_load) ~ 2 H S_B / f0 * f'
            b_gain[k, idx] = -C_p[k] * bias * inertia[idx] / len(idx)
    p_lim, a_lim = cfg.p_limit, cfg.agc_limit
    n_X = 3 * g + 2

    def _col(a, ndim):
        return a.reshape((-1,) + (1,) * (ndim - 1))

    def drift(X):
        X = np.asarray(X, dtype=float)
        if X.shape[0] != n_X:
            raise DimensionError(f"state must have {n_X} rows, got {X.shape[0]}")
        nd = X.ndim
        delta, f, Pm, agc = X[:g], X[g:2 * g], X[2 * g:3 * g], X[3 * g:]
        dev = f - f0
        dot_delta = 2.0 * np.pi * dev
        Pe = phys.electric_power(delta)
        flows, rates = phys.tie_flows(delta, dot_delta)
        gk = np.sum(flows - _col(sched, nd), axis=0)
        hk = np.sum(rates, axis=0)
        d_f = _col(inertia, nd) * (Pm - Pe - dev / _col(Dd, nd))
        dPp = np.clip(-dev / _col(S, nd), -p_lim, p_lim)
        agc_sat = np.clip(agc, -a_lim, a_lim)
        agc_gen = agc_sat[area - 1]
        d_Pm = (_col(P_m0, nd) + _col(v, nd) * dPp + _col(w, nd) * agc_gen - Pm) / _col(T_ch, nd)
        imbalance = Pm - Pe
        # area-1 export counts positively for area 1 and negatively for area 2
        tie_err = np.stack([gk, -gk])
        tie_rate = np.stack([hk, -hk])
        d_agc = (np.tensordot(c_gain, dev, axes=1) + np.tensordot(b_gain, imbalance, axes=1)
                 - tie_err / _col(T_N, nd) - _col(C_p, nd) * tie_rate
                 - _col(K / T_N, nd) * (agc - agc_sat))
        return np.concatenate([dot_delta, d_f, d_Pm, d_agc], axis=0)

    B_d = np.zeros((n_X, g))
    B_d[g:2 * g] = -np.diag(inertia)
    B_d[3 * g:] = -b_gain
    B_f = np.zeros((n_X, 1))
    for i in members[0]:
        B_f[2 * g + i, 0] = w[i] / T_ch[i]
    C = np.zeros((2 * g, n_X))
    C[:, g:3 * g] = np.eye(2 * g)
    X_e = np.concatenate([delta_e, np.full(g, f0), P_m0, np.zeros(2)])
    params = {
        "config": cfg, "P_m0": P_m0, "scheduled_tie": sched, "c_gain": c_gain, "b_gain": b_gain,
        "inertia": inertia, "Y_red": phys.kron.Y_red,
    }
    meta = {"state_labels": state_labels(g), "output_labels": output_labels(g), "f0": f0}
    return OdeSystem(drift, B_d, B_f, C, None, X_e, "two-area", params, meta)


def find_equilibrium(sys: OdeSystem, X0, d=None, tol: float = 1e-9, max_iter: int = 60):
    """Damped Newton iteration for ``h(X) + B_d d = 0``.

    Steps are least-squares solutions, so singular Jacobians (the angle
    reference of a power network) are handled; the step is halved until the
    residual decreases.

    Raises
    ------
    ConvergenceError
        With the best iterate if ``||h(X)||_inf <= tol`` is not reached.
    """
    X = np.array(X0, dtype=float)
    dvec = np.zeros(sys.n_d) if d is None else np.asarray(d, dtype=float)
    zero_f = np.zeros(sys.n_f)

    def F(Z):
        return sys.rhs(Z, dvec, zero_f)

    r = F(X)
    best, best_res = X.copy(), float(np.max(np.abs(r)))
    for _ in range(max_iter):
        res = float(np.max(np.abs(r)))
        if not np.isfinite(res):
            break
        if res <= tol:
            return X
        J = linearize(sys, X)
        step = np.linalg.lstsq(J, -r, rcond=1e-12)[0]
        lam = 1.0
        while lam > 1e-6:
            Xn = X + lam * step
            rn = F(Xn)
            if np.all(np.isfinite(rn)) and np.max(np.abs(rn)) < res:
                break
            lam *= 0.5
        else:
            break
        X, r = Xn, rn
        if np.max(np.abs(r)) < best_res:
            best, best_res = X.copy(), float(np.max(np.abs(r)))
    if best_res <= tol:
        return best
    raise ConvergenceError(f"no equilibrium found; best residual {best_res:.3e}", best, best_res)


@dataclass(eq=False)
class Trajectory:
    """Simulation output on a uniform grid.

    ``X`` has shape ``(n_X, N, ...)`` (``None`` when states were not recorded),
    ``Y`` has shape ``(n_Y, N, ...)``; ``d`` and ``f`` are the sampled inputs.
    """

    t: np.ndarray
    X: Optional[np.ndarray]
    Y: np.ndarray
    d: np.ndarray
    f: np.ndarray
    labels: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


def _as_input(sig, n: int, batch: tuple) -> Callable:
    if sig is None:
        zero = np.zeros((n,) + batch)
        return lambda t: zero
    if callable(sig):
        return sig
    raise TypeError("inputs must be callables of time or None")


def simulate(sys: OdeSystem, d=None, f=None, T: float = 10.0, dt: float = 1e-3, X0=None,
             batch: Optional[int] = None, record_states: bool = True,
             stiffness_check: bool = True) -> Trajectory:
    """Fixed-step RK4 from ``X0`` (default ``sys.X_e``).

    ``d`` and ``f`` are callables returning arrays of shape ``(n_d, ...)`` and
    ``(n_f, ...)`` at time ``t``; trailing axes form a batch of independent
    runs (pass ``batch`` so the initial state can be broadcast).

    Raises
    ------
    StiffnessError
        If the linearization at ``X_e`` has an eigenvalue with modulus above ``0.1/dt``.
    SimulationDiverged
        On non-finite states; the partial trajectory is attached.
    """
    n = int(round(T / dt))
    if n < 1 or not np.isclose(n * dt, T, rtol=1e-9):
        raise ValueError(f"T={T} must be a positive multiple of dt={dt}")
    if stiffness_check and sys.X_e is not None:
        lam = np.linalg.eigvals(linearize(sys, sys.X_e))
        if np.max(np.abs(lam)) > 0.1 / dt:
            raise StiffnessError(f"eigenvalue modulus {np.max(np.abs(lam)):.3g} exceeds 0.1/dt = {0.1 / dt:.3g}")
    bshape = () if batch is None else (batch,)
    X = np.array(sys.X_e if X0 is None else X0, dtype=float)
    if X.ndim == 1 and bshape:
        X = np.repeat(X[:, None], batch, axis=1)
    din = _as_input(d, sys.n_d, bshape)
    fin = _as_input(f, sys.n_f, bshape)
    t = np.linspace(0.0, n * dt, n + 1)
    xs = np.empty((sys.n_X, n + 1) + X.shape[1:]) if record_states else None
    ys = np.empty((sys.n_Y, n + 1) + X.shape[1:])
    ds = np.empty((sys.n_d, n + 1) + X.shape[1:])
    fs = np.empty((sys.n_f, n + 1) + X.shape[1:])

    def put(k, Xk, dk, fk):
        if xs is not None:
            xs[:, k] = Xk
        ys[:, k] = np.tensordot(sys.C, Xk, axes=1)
        ds[:, k] = dk
        fs[:, k] = fk

    d0, f0 = din(0.0), fin(0.0)
    put(0, X, d0, f0)
    for k in range(n):
        tk = t[k]
        dm, fm = din(tk + 0.5 * dt), fin(tk + 0.5 * dt)
        d1, f1 = din(t[k + 1]), fin(t[k + 1])
        k1 = sys.rhs(X, d0, f0)
        k2 = sys.rhs(X + 0.5 * dt * k1, dm, fm)
        k3 = sys.rhs(X + 0.5 * dt * k2, dm, fm)
        k4 = sys.rhs(X + dt * k3, d1, f1)
        X = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        put(k + 1, X, d1, f1)
        d0, f0 = d1, f1
        if k % 256 == 0 and not np.all(np.isfinite(X)):
            partial = Trajectory(t[:k + 2], None if xs is None else xs[:, :k + 2], ys[:, :k + 2],
                                 ds[:, :k + 2], fs[:, :k + 2])
            raise SimulationDiverged(f"non-finite state at t={t[k + 1]:.4f}", partial)
    if not np.all(np.isfinite(X)):
        raise SimulationDiverged("non-finite state at the end of the horizon",
                                 Trajectory(t, xs, ys, ds, fs))
    labels = dict(sys.meta or {})
    return Trajectory(t, xs, ys, ds, fs, labels)
