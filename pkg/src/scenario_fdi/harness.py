"""Scenario pipelines: disturbance sampling, signatures, training and Monte-Carlo evaluation.

Every random quantity is drawn from a generator seeded by ``(master_seed, counter)``
so results do not depend on batch sizes or worker counts.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .dae import NonlinearDaeModel, OdeSystem, linear_ode
from .errors import InsufficientScenarios, SimulationDiverged, UndefinedIndicator
from .io import dumps, fingerprint, save_signature
from .lti import poly_from_roots
from .power import LoadDisturbance, LoadDisturbanceParams, nonlinearity_signature_of, \
    sample_load_disturbance, simulate, stack_disturbances
from .runtime import ResidualTrace, filter_response, realize_filter, rho_indicator, windowed_l2
from .signals import SampledSignal
from .signature import BasisSpec, SignatureMatrix, gram_matrix, signature_matrix, \
    signature_matrix_exact
from .synthesis import FilterCoefficients, PayoffSpec, ScenarioParams, SynthesisResult, \
    sample_complexity, two_stage_average, two_stage_chance

__all__ = [
    "ScenarioEntry",
    "ScenarioSet",
    "EvaluationReport",
    "ConvergenceSeries",
    "scenario_rng",
    "generate_scenarios",
    "train",
    "evaluate",
    "convergence_diagnostic",
    "write_manifest",
]


def scenario_rng(master_seed: int, counter: int, stream: int = 0) -> np.random.Generator:
    """Generator for item ``counter`` of stream ``stream`` under ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(stream), int(counter)]))


@dataclass(eq=False)
class ScenarioEntry:
    id: str
    seed: tuple
    disturbance: LoadDisturbance
    Q: Optional[SignatureMatrix]
    status: str = "ok"


@dataclass(eq=False)
class ScenarioSet:
    """Signature matrices of i.i.d. disturbance scenarios plus the metadata that produced them."""

    entries: list
    basis_k: Optional[int]
    horizon: float
    d_N: int
    a: np.ndarray
    method: str
    model_fingerprint: str = ""
    params: Optional[dict] = None
    master_seed: int = 0

    @property
    def ok(self) -> list:
        return [e for e in self.entries if e.status == "ok"]

    @property
    def skipped(self) -> list:
        return [e for e in self.entries if e.status != "ok"]

    @property
    def matrices(self) -> list:
        return [e.Q for e in self.ok]

    def __len__(self):
        return len(self.ok)

    def save(self, directory) -> None:
        """Write ``scenarios.json`` and one text matrix per usable scenario."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        items = []
        for e in self.entries:
            item = {"id": e.id, "seed": list(e.seed), "status": e.status,
                    "nodes": e.disturbance.meta.get("nodes", []),
                    "alpha0": e.disturbance.alpha0, "alpha": e.disturbance.alpha,
                    "omega": e.disturbance.omega, "phi": e.disturbance.phi,
                    "t_on": e.disturbance.t_on}
            if e.Q is not None:
                fname = f"Q_{e.id}.txt"
                save_signature(e.Q, directory / fname)
                item["matrix"] = fname
            items.append(item)
        doc = {"basis_k": self.basis_k, "horizon": self.horizon, "d_N": self.d_N, "a": self.a,
               "method": self.method, "model_fingerprint": self.model_fingerprint,
               "params": self.params, "master_seed": self.master_seed, "scenarios": items}
        (directory / "scenarios.json").write_text(dumps(doc))

    @classmethod
    def load(cls, directory) -> "ScenarioSet":
        import json

        from .io import load_signature

        directory = Path(directory)
        doc = json.loads((directory / "scenarios.json").read_text())
        entries = []
        for it in doc["scenarios"]:
            dist = LoadDisturbance(np.asarray(it["alpha0"], float), np.asarray(it["alpha"], float),
                                   np.asarray(it["omega"], float), np.asarray(it["phi"], float),
                                   float(it["t_on"]), {"nodes": it["nodes"]})
            Q = load_signature(directory / it["matrix"]) if "matrix" in it else None
            entries.append(ScenarioEntry(it["id"], tuple(it["seed"]), dist, Q, it["status"]))
        return cls(entries, doc["basis_k"], float(doc["horizon"]), int(doc["d_N"]),
                   np.asarray(doc["a"], float), doc["method"], doc["model_fingerprint"],
                   doc["params"], int(doc["master_seed"]))


def _draw(params: LoadDisturbanceParams, master_seed: int, i: int, pattern: str, stream: int = 0):
    if pattern == "per_node":
        node = params.nodes[i % len(params.nodes)]
        params = replace(params, nodes=(node,), nodes_per_draw=1)
    elif pattern != "random":
        raise ValueError(f"unknown excitation pattern {pattern!r}")
    return sample_load_disturbance(params, scenario_rng(master_seed, i, stream))


def _simulate_batch(sys, dists, T, dt, f=None, record_states=True):
    """Batched run; on divergence falls back to one-by-one runs and returns ``None`` for failures."""
    try:
        tr = simulate(sys, d=stack_disturbances(dists), f=f, T=T, dt=dt, batch=len(dists),
                      record_states=record_states)
        return [(tr, b) for b in range(len(dists))]
    except SimulationDiverged:
        out = []
        for dist in dists:
            try:
                out.append((simulate(sys, d=stack_disturbances([dist]), f=f, T=T, dt=dt, batch=1,
                                     record_states=record_states), 0))
            except SimulationDiverged:
                out.append(None)
        return out


def _chunks(n, size):
    return [range(s, min(s + size, n)) for s in range(0, n, size)]


def generate_scenarios(sys: OdeSystem, model: NonlinearDaeModel, params: LoadDisturbanceParams,
                       basis: Optional[BasisSpec], a, d_N: int, n: int, master_seed: int = 0,
                       dt: float = 1e-3, method: str = "basis", gram_mode: str = "zero_state",
                       pattern: str = "random", batch_size: int = 32, jobs: int = 1,
                       horizon: Optional[float] = None, model_fingerprint: str = "") -> ScenarioSet:
    """Sample ``n`` disturbances, simulate the fault-free system and compute signature matrices.

    ``method="basis"`` projects each nonlinearity signature on ``basis``
    (Gram mode ``gram_mode``); ``method="exact"`` integrates the filtered
    signature directly. Diverged simulations are kept in the set with status
    ``"diverged"`` and no matrix.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if method not in ("basis", "exact"):
        raise ValueError(f"unknown signature method {method!r}")
    if method == "basis" and basis is None:
        raise ValueError("the basis method needs a basis")
    T = basis.T if basis is not None else float(horizon)
    a = np.asarray(a, dtype=float)
    A = model.origin["A"] if model.origin and "A" in model.origin else None
    G = gram_matrix(basis, a, gram_mode) if method == "basis" else None
    dists = [_draw(params, master_seed, i, pattern) for i in range(n)]

    def work(idx):
        runs = _simulate_batch(sys, [dists[i] for i in idx], T, dt)
        out = []
        for i, run in zip(idx, runs):
            sid = f"s{i:05d}"
            if run is None:
                out.append(ScenarioEntry(sid, (master_seed, i), dists[i], None, "diverged"))
                continue
            tr, b = run
            e_all = nonlinearity_signature_of(sys, tr, A=A)
            e_arr = e_all.values if isinstance(e_all, SampledSignal) else e_all[..., b]
            e = SampledSignal(tr.t, e_arr)
            if method == "basis":
                Q, _ = signature_matrix(e, basis, a, d_N, gram_mode, G=G, scenario_id=sid)
            else:
                Q = signature_matrix_exact(e, a, d_N, scenario_id=sid)
            out.append(ScenarioEntry(sid, (master_seed, i), dists[i], Q))
        return out

    chunks = _chunks(n, batch_size)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    entries = [e for part in parts for e in part]
    return ScenarioSet(entries, basis.k if basis is not None else None, T, d_N, a, method,
                       model_fingerprint, params.to_dict(), master_seed)


def train(model: NonlinearDaeModel, scenarios, perspective: str = "ap",
          payoff: PayoffSpec = PayoffSpec("square"), a=None, d_N: Optional[int] = None,
          epsilon: Optional[float] = None, beta: Optional[float] = None,
          override: bool = False) -> SynthesisResult:
    """Two-stage scenario training (``perspective`` is ``"ap"`` or ``"cp"``).

    With ``epsilon`` and ``beta`` given, chance-performance training refuses
    sets smaller than the sample-complexity bound unless ``override`` is set;
    the certificate ``(epsilon, beta, n, n_required)`` is stamped into the
    diagnostics either way.
    """
    if isinstance(scenarios, ScenarioSet):
        mats = scenarios.matrices
        a = scenarios.a if a is None else a
        d_N = scenarios.d_N if d_N is None else d_N
        fp = scenarios.model_fingerprint
    else:
        mats = list(scenarios)
        fp = ""
    if a is None or d_N is None:
        raise ValueError("denominator and degree are required")
    if not mats:
        raise ValueError("no usable scenarios")
    cert = None
    if epsilon is not None and beta is not None:
        sp = ScenarioParams(epsilon, beta, model.n_r, model.n_f, d_N, model.F.degree)
        need = sample_complexity(sp)
        cert = {"epsilon": epsilon, "beta": beta, "n": len(mats), "n_required": need,
                "override": bool(override and len(mats) < need)}
        if perspective == "cp" and len(mats) < need and not override:
            raise InsufficientScenarios(
                f"{len(mats)} scenarios given, the bound for epsilon={epsilon}, beta={beta} needs {need}",
                len(mats), need)
    if perspective == "ap":
        res = two_stage_average(model, d_N, a, mats, payoff)
    elif perspective == "cp":
        res = two_stage_chance(model, d_N, a, mats)
    else:
        raise ValueError(f"unknown perspective {perspective!r}")
    if cert is not None:
        res.diagnostics["certificate"] = cert
    res.diagnostics["scenario_fingerprint"] = fp
    return res


@dataclass(eq=False)
class EvaluationReport:
    """Per-trial indicators for one or more filters evaluated on the same trials.

    ``rho[name]`` and ``wl2_max[name]`` are arrays over trials (``nan`` where
    undefined); ``violations[name]`` flags trials whose pre-attack windowed L2
    norm exceeded ``sqrt(gamma)``.
    """

    names: list
    trial_ids: list
    seeds: list
    rho: dict
    wl2_max: dict
    violations: dict
    gammas: dict
    runtime: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def violation_frequency(self, name) -> float:
        v = np.asarray(self.violations[name], dtype=float)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else float("nan")

    def paired_wins(self, better: str, worse: str) -> float:
        """Fraction of trials with ``rho[better] < rho[worse]``."""
        a, b = np.asarray(self.rho[better]), np.asarray(self.rho[worse])
        ok = np.isfinite(a) & np.isfinite(b)
        return float(np.mean(a[ok] < b[ok])) if ok.any() else float("nan")

    def histogram(self, name, bins=10):
        r = np.asarray(self.rho[name])
        return np.histogram(r[np.isfinite(r)], bins=bins, range=(0.0, 1.0))

    def write_csv(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "rho_histogram.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "seed"] + [f"rho_{n}" for n in self.names])
            for k, tid in enumerate(self.trial_ids):
                w.writerow([tid, self.seeds[k]] + [repr(float(self.rho[n][k])) for n in self.names])
        with open(directory / "violations.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "filter", "wl2_max_pre_attack", "gamma", "violated"])
            for k, tid in enumerate(self.trial_ids):
                for n in self.names:
                    w.writerow([tid, n, repr(float(self.wl2_max[n][k])), repr(float(self.gammas[n])),
                                _flag(self.violations[n][k])])


def _flag(v) -> str:
    return "" if not np.isfinite(v) else str(int(v))


def _as_filter(obj) -> tuple[FilterCoefficients, float]:
    if isinstance(obj, SynthesisResult):
        return obj.filter, obj.gamma_star
    return obj, float("inf")


def evaluate(model: NonlinearDaeModel, sys: OdeSystem, filters, params: LoadDisturbanceParams,
             n_trials: int, seed: int = 0, T: float = 30.0, T_ack: Optional[float] = None,
             attack_amplitude: float = 14.0, attack: str = "step", attack_omega: float = 1.0,
             linearized: bool = False, dt: float = 1e-3, T_w: float = 10.0,
             pattern: str = "random", batch_size: int = 25, jobs: int = 1,
             traces_dir=None) -> EvaluationReport:
    """Monte-Carlo evaluation of trained filters on fresh disturbances.

    ``filters`` maps names to :class:`SynthesisResult` (threshold ``gamma_star``)
    or bare :class:`FilterCoefficients` (no threshold). Each trial draws one
    disturbance from ``params`` (stream 1 of ``seed``), injects the attack from
    ``T_ack`` (default ``0.9 T``) and records ``rho`` and the largest windowed
    L2 norm over windows that end before the attack.
    """
    if not isinstance(filters, dict):
        filters = {"filter": filters}
    T_ack = 0.9 * T if T_ack is None else T_ack
    names = list(filters)
    realized = {}
    gammas = {}
    for name, obj in filters.items():
        filt, gamma = _as_filter(obj)
        realized[name] = realize_filter(filt, model.L)
        gammas[name] = gamma
    # The attack is off at ``t = T_ack`` itself so that the last RK4 stage of the
    # step ending at ``T_ack`` does not leak it into the pre-attack window of rho.
    if attack == "step":
        def fsig(t):
            return np.array([attack_amplitude if t > T_ack else 0.0])
    elif attack == "sine":
        def fsig(t):
            return np.array([attack_amplitude * np.sin(attack_omega * (t - T_ack)) if t > T_ack else 0.0])
    else:
        raise ValueError(f"unknown attack shape {attack!r}")
    if linearized:
        A = model.origin["A"]
        run_sys = linear_ode(A, sys.B_d, sys.B_f, sys.C).with_equilibrium(np.zeros(sys.n_X))
        y_off = np.zeros(sys.n_Y)
    else:
        run_sys = sys
        y_off = sys.C @ sys.X_e
    dists = [_draw(params, seed, i, pattern, stream=1) for i in range(n_trials)]
    t0 = time.perf_counter()

    def batch_f(nb):
        return lambda t: np.repeat(fsig(t)[:, None], nb, axis=1)

    def work(idx):
        dl = [dists[i] for i in idx]
        runs = _simulate_batch(run_sys, dl, T, dt, f=batch_f(len(dl)), record_states=False)
        rows = []
        for i, run in zip(idx, runs):
            row = {}
            if run is None:
                for name in names:
                    row[name] = (np.nan, np.nan, np.nan)
                rows.append((i, row, None))
                continue
            tr, b = run
            z = tr.Y[..., b] - y_off[:, None]
            traces = {}
            for name in names:
                r, _ = filter_response(realized[name], z, tr.dt)
                trace = ResidualTrace(SampledSignal(tr.t, r))
                traces[name] = trace
                try:
                    rho = rho_indicator(trace, T_ack)
                except UndefinedIndicator:
                    rho = np.nan
                wl2 = windowed_l2(trace, T_w)
                pre = wl2[tr.t <= T_ack]
                wmax = float(np.nanmax(pre)) if np.isfinite(pre).any() else np.nan
                g = gammas[name]
                viol = float(wmax > np.sqrt(g)) if np.isfinite(g) and np.isfinite(wmax) else np.nan
                row[name] = (rho, wmax, viol)
            rows.append((i, row, traces))
        return rows

    chunks = _chunks(n_trials, batch_size)
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    rows = sorted((r for part in parts for r in part), key=lambda x: x[0])
    if traces_dir is not None:
        tdir = Path(traces_dir)
        tdir.mkdir(parents=True, exist_ok=True)
        for i, _, traces in rows:
            for name, trace in (traces or {}).items():
                trace.gamma, trace.window = gammas[name], T_w
                trace.to_csv(tdir / f"trace_{i:05d}_{name}.csv")
    rho = {n: np.array([r[1][n][0] for r in rows]) for n in names}
    wl2 = {n: np.array([r[1][n][1] for r in rows]) for n in names}
    viol = {n: np.array([r[1][n][2] for r in rows]) for n in names}
    settings = {"T": T, "T_ack": T_ack, "attack": attack, "attack_amplitude": attack_amplitude,
                "linearized": linearized, "dt": dt, "T_w": T_w, "seed": seed, "n_trials": n_trials,
                "pattern": pattern}
    return EvaluationReport(names, [f"t{i:05d}" for i in range(n_trials)],
                            [f"{seed}:1:{i}" for i in range(n_trials)], rho, wl2, viol, gammas,
                            {"seconds": time.perf_counter() - t0}, settings)


@dataclass(eq=False)
class ConvergenceSeries:
    """``e_n`` estimates over a schedule of sample sizes and the fitted log-log slope."""

    n: np.ndarray
    e_n: np.ndarray
    batches: tuple                # per schedule entry, the sup error of every disjoint batch
    slope: float
    pool_size: int

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "e_n", "batches", "batch_std"])
            for k, n in enumerate(self.n):
                b = np.asarray(self.batches[k])
                w.writerow([int(n), repr(float(self.e_n[k])), int(b.size), repr(float(b.std()))])


def convergence_diagnostic(sys: OdeSystem, model: NonlinearDaeModel, params: LoadDisturbanceParams,
                           basis: Optional[BasisSpec], a, d_N: int,
                           schedule: Sequence[int] = (10, 20, 40, 80, 160), seed: int = 0,
                           n_directions: int = 256, extra_directions: Sequence = (),
                           pool_factor: int = 12, **gen_kwargs) -> ConvergenceSeries:
    """Uniform empirical-average error ``e_n = sup_N |mean_n N Q N^T - E[N Q N^T]|``.

    The sup runs over ``n_directions`` points drawn uniformly from the unit
    inf-norm ball plus ``extra_directions`` (scaled into the ball). One pool of
    ``M = pool_factor * max(schedule)`` scenarios is drawn and, for every ``n``,
    split into ``M // n`` disjoint batches. Each batch mean is compared with the
    mean of the rest of the pool, which is independent of the batch, and ``e_n``
    is the average over batches. The reference noise makes the estimate
    conservative (its scale is ``sqrt(1/n + 1/(M - n))`` rather than ``sqrt(1/n)``).
    """
    schedule = np.asarray([int(s) for s in schedule])
    if schedule.size == 0 or np.any(np.diff(schedule) <= 0) or schedule[0] < 1:
        raise ValueError("schedule must be strictly increasing positive integers")
    if pool_factor < 2:
        raise ValueError("pool_factor must be at least 2")
    dim = model.n_r * (d_N + 1)
    rng = scenario_rng(seed, 0, stream=7)
    dirs = rng.uniform(-1.0, 1.0, size=(n_directions, dim))
    extra = [np.asarray(x, float).ravel() for x in extra_directions]
    extra = [x / np.max(np.abs(x)) for x in extra if np.max(np.abs(x)) > 0]
    if extra:
        dirs = np.vstack([dirs, np.array(extra)])

    pool = generate_scenarios(sys, model, params, basis, a, d_N, pool_factor * int(schedule[-1]),
                              master_seed=seed, **gen_kwargs)
    Qs = np.stack([q.Q for q in pool.matrices])
    v = np.einsum("kd,nde,ke->nk", dirs, Qs, dirs)           # (M, K)
    M = v.shape[0]
    if M < 2 * schedule[-1]:
        raise ValueError(f"only {M} scenarios succeeded; need at least {2 * schedule[-1]}")
    total = v.sum(axis=0)
    e_n, batches = np.zeros(schedule.size), []
    for k, n in enumerate(schedule):
        sums = v[: (M // n) * n].reshape(M // n, n, -1).sum(axis=1)
        err = np.max(np.abs(sums / n - (total - sums) / (M - n)), axis=1)
        batches.append(err)
        e_n[k] = err.mean()
    pos = e_n > 0
    slope = float(np.polyfit(np.log(schedule[pos]), np.log(e_n[pos]), 1)[0]) if pos.sum() >= 2 else float("nan")
    return ConvergenceSeries(schedule, e_n, tuple(batches), slope, M)


def write_manifest(directory, **fields) -> str:
    """Write ``manifest.json`` (config, seeds, package and library versions); returns its hash."""
    import cvxpy
    import scipy

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = dict(fields)
    doc["versions"] = {"scenario_fdi": __version__, "numpy": np.__version__,
                       "scipy": scipy.__version__, "cvxpy": cvxpy.__version__}
    text = dumps(doc)
    (directory / "manifest.json").write_text(text)
    return fingerprint(text.encode())


def default_denominator(d_N: int, root: float = 2.0, multiplicity: Optional[int] = None) -> np.ndarray:
    """Ascending coefficients of ``(p + root)^multiplicity`` (multiplicity defaults to ``d_N``)."""
    mult = d_N if multiplicity is None else multiplicity
    return poly_from_roots([-root] * mult)
