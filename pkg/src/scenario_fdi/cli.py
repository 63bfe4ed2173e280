"""Command-line entry point.

Subcommands: ``check``, ``synth``, ``run``, ``samples``, ``gen-scenarios``,
``eval`` and ``converge``. Options can also come from a JSON file given with
``--config`` (keys are option names with dashes replaced by underscores);
explicit flags win over the file.

Exit codes: 0 success, 1 domain infeasibility, 2 input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AllBranchesInfeasible, ConvergenceError, EquilibriumError, FdiError, \
    InsufficientScenarios, ModelFileError, SimulationDiverged, Stage2Infeasible

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3


class InputError(Exception):
    """Bad command-line or configuration values."""


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _open_unit(x: str) -> float:
    v = float(x)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"{x} is not strictly between 0 and 1")
    return v


def _even_positive(x: str) -> int:
    v = int(x)
    if v <= 0 or v % 2:
        raise argparse.ArgumentTypeError(f"{x} is not a positive even integer")
    return v


def _positive_float(x: str) -> float:
    v = float(x)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"{x} is not positive")
    return v


def _existing(x: str) -> str:
    if not Path(x).exists():
        raise argparse.ArgumentTypeError(f"{x} does not exist")
    return x


# ---------------------------------------------------------------------------
# shared option groups
# ---------------------------------------------------------------------------

def _add_model(p, required=False):
    p.add_argument("--model", type=_existing, required=required,
                   help="model JSON file (default: the built-in two-area power system)")


def _add_filter(p):
    g = p.add_argument_group("filter")
    g.add_argument("--d-N", dest="d_N", type=int, default=7, help="numerator degree (default 7)")
    g.add_argument("--a-root", type=_positive_float, default=2.0,
                   help="denominator is (p + root)^multiplicity (default root 2)")
    g.add_argument("--a-mult", type=int, default=None, help="denominator multiplicity (default d_N)")


def _add_basis(p):
    g = p.add_argument_group("signature")
    g.add_argument("--k", type=_even_positive, default=160, help="Fourier basis size (default 160)")
    g.add_argument("--T", type=_positive_float, default=10.0, help="training horizon in s (default 10)")
    g.add_argument("--dt", type=_positive_float, default=1e-3, help="integration step (default 1e-3)")
    g.add_argument("--method", choices=("basis", "exact"), default="basis")
    g.add_argument("--gram-mode", choices=("zero_state", "periodic", "identity"), default="zero_state")


def _add_loads(p):
    g = p.add_argument_group("load disturbances")
    g.add_argument("--pattern", choices=("random", "per_node"), default="random")
    g.add_argument("--nodes-per-draw", type=int, default=1)
    g.add_argument("--step-load", type=float, default=None,
                   help="use a deterministic step of this size (MW) instead of random draws")
    g.add_argument("--load-node", type=int, default=None,
                   help="node of the step load (default: all candidate nodes)")
    g.add_argument("--t-load", type=float, default=1.0, help="onset of the load deviation (s)")


def _add_common(p):
    p.add_argument("--config", type=_existing, help="JSON file with option values; flags win")
    p.add_argument("--jobs", type=int, default=None, help="worker threads (default: available cores)")
    p.add_argument("--seed", type=int, default=0, help="master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenario-fdi", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="detectability test of a model")
    p.add_argument("model_path", type=_existing, nargs="?", default=None)
    _add_common(p)

    p = sub.add_parser("synth", help="synthesize a filter")
    _add_common(p)
    _add_model(p)
    _add_filter(p)
    _add_basis(p)
    _add_loads(p)
    p.add_argument("--perspective", choices=("approach1", "qp", "ap", "cp"), default="ap")
    p.add_argument("--scenarios", type=_existing, help="directory written by gen-scenarios")
    p.add_argument("--n", type=int, default=50, help="scenarios to generate when --scenarios is absent")
    p.add_argument("--signature", type=_existing, help="signature matrix file for --perspective qp")
    p.add_argument("--epsilon", type=_open_unit)
    p.add_argument("--beta", type=_open_unit)
    p.add_argument("--override", action="store_true",
                   help="train chance performance even below the sample-complexity bound")
    p.add_argument("--out", required=True)

    for name, hlp in (("run", "simulate, filter and report residuals"),
                      ("eval", "Monte-Carlo comparison of trained filters")):
        p = sub.add_parser(name, help=hlp)
        _add_common(p)
        _add_model(p)
        _add_loads(p)
        p.add_argument("--result", action="append", required=True,
                       help="synthesis result file, optionally NAME=PATH; repeatable")
        p.add_argument("--trials", type=int, default=1 if name == "run" else 100)
        p.add_argument("--T", type=_positive_float, default=15.0 if name == "run" else 30.0)
        p.add_argument("--T-ack", dest="T_ack", type=float, default=None,
                       help="attack onset (default 10 s for run, 0.9 T for eval)")
        p.add_argument("--attack", type=float, default=14.0, help="attack amplitude (default 14)")
        p.add_argument("--attack-shape", choices=("step", "sine"), default="step")
        p.add_argument("--window", type=_positive_float, default=10.0, help="alarm window T_w")
        p.add_argument("--dt", type=_positive_float, default=1e-3)
        p.add_argument("--linearized", action="store_true", help="simulate the linearized system")
        p.add_argument("--out", required=True)

    p = sub.add_parser("samples", help="scenario count needed for (epsilon, beta)")
    p.add_argument("--config", type=_existing)
    p.add_argument("--epsilon", type=_open_unit, required=True)
    p.add_argument("--beta", type=_open_unit, required=True)
    p.add_argument("--n-r", dest="n_r", type=int, required=True)
    p.add_argument("--n-f", dest="n_f", type=int, default=1)
    p.add_argument("--d-N", dest="d_N", type=int, default=7)
    p.add_argument("--d-F", dest="d_F", type=int, default=0)

    p = sub.add_parser("gen-scenarios", help="sample disturbances and compute signature matrices")
    _add_common(p)
    _add_model(p)
    _add_filter(p)
    _add_basis(p)
    _add_loads(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("converge", help="empirical convergence of the average signature payoff")
    _add_common(p)
    _add_model(p)
    _add_filter(p)
    _add_basis(p)
    _add_loads(p)
    p.add_argument("--schedule", type=int, nargs="+", default=[10, 20, 40, 80, 160])
    p.add_argument("--pool-factor", type=int, default=12,
                   help="pool size as a multiple of the largest n")
    p.add_argument("--directions", type=int, default=256)
    p.add_argument("--result", type=_existing, help="add this filter to the direction set")
    p.add_argument("--out", required=True)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` fill options not given as flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            parser.exit(EXIT_INPUT, f"{parser.prog}: config {args.config}: {exc}\n")
        if not isinstance(cfg, dict):
            parser.exit(EXIT_INPUT, f"{parser.prog}: config must be a JSON object\n")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        known = set(vars(args))
        unknown = sorted(set(cfg) - known)
        if unknown:
            parser.exit(EXIT_INPUT, f"{parser.prog}: unknown config keys {unknown}\n")
        # re-parse with the file values as defaults so explicit flags still win
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load(args):
    from .io import load_model, model_from_dict

    if getattr(args, "model", None):
        return load_model(args.model)
    return model_from_dict({"kind": "ode", "evaluator": "two_area", "params": {}})


def _need_ode(loaded):
    if loaded.ode is None:
        raise InputError("this command simulates the model; give an 'ode' model file")
    return loaded.ode


def _denominator(args):
    from .harness import default_denominator

    mult = args.d_N if args.a_mult is None else args.a_mult
    if args.d_N < 0:
        raise InputError("d_N must be nonnegative")
    if mult < args.d_N:
        raise InputError(f"denominator degree {mult} is below d_N = {args.d_N}")
    return default_denominator(args.d_N, args.a_root, mult)


def _jobs(args) -> int:
    j = getattr(args, "jobs", None)
    return max(1, j if j else (os.cpu_count() or 1))


def _load_params(args, n_nodes):
    from .power import LoadDisturbanceParams

    nodes = tuple(range(n_nodes)) if args.load_node is None else (args.load_node,)
    if args.step_load is not None:
        return LoadDisturbanceParams(n_nodes=n_nodes, nodes=nodes, nodes_per_draw=1,
                                     alpha0_range=(args.step_load, args.step_load),
                                     alpha_range=(0.0, 0.0), eta_range=(0, 0),
                                     energy_bound=max(args.step_load ** 2, 1e-300), t_on=args.t_load)
    return LoadDisturbanceParams(n_nodes=n_nodes, nodes=nodes,
                                 nodes_per_draw=min(args.nodes_per_draw, len(nodes)), t_on=args.t_load)


def _basis(args):
    from .signature import make_fourier_basis

    return make_fourier_basis(args.k, args.T) if args.method == "basis" else None


def _scenarios(args, loaded, a):
    from .harness import ScenarioSet, generate_scenarios

    if getattr(args, "scenarios", None):
        sset = ScenarioSet.load(args.scenarios)
        if sset.d_N != args.d_N or not np.allclose(sset.a, a):
            raise InputError("scenario set was built for a different filter degree or denominator")
        return sset
    sys_ = _need_ode(loaded)
    params = _load_params(args, sys_.n_d)
    _log(f"generating {args.n} scenarios (seed {args.seed})")
    return generate_scenarios(sys_, loaded.model, params, _basis(args), a, args.d_N, args.n,
                              master_seed=args.seed, dt=args.dt, method=args.method,
                              gram_mode=args.gram_mode,
                              pattern="per_node" if args.step_load is not None else args.pattern,
                              jobs=_jobs(args), horizon=args.T,
                              model_fingerprint=loaded.fingerprint)


def _manifest(out, args, loaded=None, **extra) -> str:
    from .harness import write_manifest

    opts = {k: v for k, v in sorted(vars(args).items()) if k not in ("jobs",)}
    fields = {"command": args.command, "options": opts, **extra}
    if loaded is not None:
        fields["model_fingerprint"] = loaded.fingerprint
    return write_manifest(out, **fields)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    from .dae import detectability_check
    from .io import load_model

    if args.model_path is None:
        loaded = _load(argparse.Namespace(model=None))
    else:
        loaded = load_model(args.model_path)
    rep = detectability_check(loaded.model.H, loaded.model.F, seed=args.seed)
    print(rep.summary())
    return EXIT_OK if rep else EXIT_INFEASIBLE


def cmd_samples(args) -> int:
    from .synthesis import ScenarioParams, sample_complexity

    n = sample_complexity(ScenarioParams(args.epsilon, args.beta, args.n_r, args.n_f, args.d_N, args.d_F))
    print(n)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .harness import train
    from .io import load_signature, save_result
    from .synthesis import max_sensitivity_filter, robust_filter_qp

    loaded = _load(args)
    a = _denominator(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if args.perspective == "approach1":
        res = max_sensitivity_filter(loaded.model, args.d_N, a)
    elif args.perspective == "qp":
        if not args.signature:
            raise InputError("--perspective qp needs --signature")
        res = robust_filter_qp(loaded.model, args.d_N, a, load_signature(args.signature))
    else:
        if args.perspective == "cp" and args.epsilon is not None and args.beta is not None \
                and not args.scenarios and not args.override:
            # refuse before spending time on simulation
            from .synthesis import ScenarioParams, sample_complexity

            need = sample_complexity(ScenarioParams(args.epsilon, args.beta, loaded.model.n_r,
                                                    loaded.model.n_f, args.d_N, loaded.model.F.degree))
            if args.n < need:
                raise InsufficientScenarios(
                    f"{args.n} scenarios requested, the bound for epsilon={args.epsilon}, "
                    f"beta={args.beta} needs {need}", args.n, need)
        sset = _scenarios(args, loaded, a)
        if sset.skipped:
            _log(f"{len(sset.skipped)} scenarios diverged and were skipped")
        if not args.scenarios:
            sset.save(out / "scenarios")
        _log(f"training {args.perspective} on {len(sset)} scenarios")
        res = train(loaded.model, sset, args.perspective, a=a, d_N=args.d_N, epsilon=args.epsilon,
                    beta=args.beta, override=args.override)
        extra["n_scenarios"] = len(sset)
        extra["skipped"] = [e.id for e in sset.skipped]
    save_result(res, out / "result.json", extra)
    h = _manifest(out, args, loaded, result="result.json")
    print(f"gamma_star {res.gamma_star!r}")
    print(f"branch {res.active_branch}")
    print(f"manifest {h}")
    return EXIT_OK


def _results(specs):
    from .io import load_result

    out = {}
    for i, spec in enumerate(specs):
        name, sep, path = spec.partition("=")
        if not sep:
            name, path = (Path(spec).parent.name or f"f{i}"), spec
            if name in out:
                name = f"{name}_{i}"
        if not Path(path).exists():
            raise InputError(f"result file {path} does not exist")
        out[name] = load_result(path)
    return out


def _cmd_simulate(args, default_T_ack) -> int:
    from .harness import evaluate

    loaded = _load(args)
    sys_ = _need_ode(loaded)
    filters = _results(args.result)
    for res in filters.values():
        if res.filter.n_r != loaded.model.n_r:
            raise InputError(f"filter has {res.filter.n_r} residual rows, model has {loaded.model.n_r}")
    params = _load_params(args, sys_.n_d)
    T_ack = default_T_ack if args.T_ack is None else args.T_ack
    if T_ack is not None and not 0 < T_ack < args.T:
        raise InputError("attack onset must lie inside the horizon")
    out = Path(args.out)
    _log(f"{args.command}: {args.trials} trials, {len(filters)} filters, horizon {args.T} s")
    rep = evaluate(loaded.model, sys_, filters, params, args.trials, seed=args.seed, T=args.T,
                   T_ack=T_ack, attack_amplitude=args.attack, attack=args.attack_shape,
                   linearized=args.linearized, dt=args.dt, T_w=args.window,
                   pattern="per_node" if args.step_load is not None else args.pattern,
                   jobs=_jobs(args), traces_dir=out / "traces" if args.command == "run" else None)
    rep.write_csv(out)
    summary = {"filters": rep.names, "settings": rep.settings,
               "median_rho": {n: float(np.nanmedian(rep.rho[n])) if np.isfinite(rep.rho[n]).any()
                              else None for n in rep.names},
               "violation_frequency": {n: rep.violation_frequency(n) for n in rep.names}}
    if len(rep.names) == 2:
        summary["paired_wins"] = {f"{rep.names[0]}<{rep.names[1]}": rep.paired_wins(*rep.names)}
    from .io import dumps

    (out / "summary.json").write_text(dumps(summary))
    h = _manifest(out, args, loaded)
    for n in rep.names:
        print(f"{n} median_rho {summary['median_rho'][n]!r} violations {summary['violation_frequency'][n]!r}")
    print(f"manifest {h}")
    return EXIT_OK


def cmd_run(args) -> int:
    return _cmd_simulate(args, 10.0)


def cmd_eval(args) -> int:
    return _cmd_simulate(args, None)


def cmd_gen_scenarios(args) -> int:
    loaded = _load(args)
    a = _denominator(args)
    sset = _scenarios(args, loaded, a)
    out = Path(args.out)
    sset.save(out)
    h = _manifest(out, args, loaded, n_ok=len(sset), skipped=[e.id for e in sset.skipped])
    print(f"scenarios {len(sset)} skipped {len(sset.skipped)}")
    print(f"manifest {h}")
    return EXIT_OK


def cmd_converge(args) -> int:
    from .harness import convergence_diagnostic
    from .io import load_result

    loaded = _load(args)
    sys_ = _need_ode(loaded)
    a = _denominator(args)
    extra = []
    if args.result:
        extra.append(load_result(args.result).filter.Nbar)
    params = _load_params(args, sys_.n_d)
    _log(f"convergence over n = {args.schedule}, pool of {args.pool_factor} x {max(args.schedule)}")
    series = convergence_diagnostic(sys_, loaded.model, params, _basis(args), a, args.d_N,
                                    schedule=args.schedule, seed=args.seed,
                                    n_directions=args.directions, extra_directions=extra,
                                    pool_factor=args.pool_factor, dt=args.dt, method=args.method,
                                    gram_mode=args.gram_mode, pattern=args.pattern,
                                    jobs=_jobs(args), horizon=args.T)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series.write_csv(out / "convergence.csv")
    h = _manifest(out, args, loaded, slope=series.slope)
    print(f"slope {series.slope!r}")
    print(f"manifest {h}")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "synth": cmd_synth, "run": cmd_run, "eval": cmd_eval,
            "samples": cmd_samples, "gen-scenarios": cmd_gen_scenarios, "converge": cmd_converge}


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the stable exit-code contract."""
    if isinstance(exc, (AllBranchesInfeasible, Stage2Infeasible)):
        return EXIT_INFEASIBLE
    if isinstance(exc, (InputError, ModelFileError, InsufficientScenarios, ValueError, OSError)):
        return EXIT_INPUT
    if isinstance(exc, (ConvergenceError, SimulationDiverged, EquilibriumError, FdiError,
                        np.linalg.LinAlgError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        code = exit_code_for(exc)
        _log(f"error ({type(exc).__name__}): {exc}")
        return code


if __name__ == "__main__":
    sys.exit(main())
