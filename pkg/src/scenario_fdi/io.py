"""File formats: model descriptions, synthesis results and signature matrices.

Everything is JSON or plain text with full double precision (``repr`` round
trip), so files written twice from the same inputs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np

from .dae import NonlinearDaeModel, OdeSystem, linear_ode, ode_to_dae
from .errors import ModelFileError
from .polymatrix import PolyMatrix
from .power import AgcData, GeneratorData, Line, PowerSystemConfig, build_two_area_model, \
    default_config
from .signature import SignatureMatrix
from .synthesis import Branch, FilterCoefficients, SynthesisResult

__all__ = [
    "LoadedModel",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "config_to_dict",
    "config_from_dict",
    "save_result",
    "load_result",
    "result_to_dict",
    "result_from_dict",
    "save_signature",
    "load_signature",
    "dumps",
    "fingerprint",
]


def _clean(obj):
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        # strict JSON has no nan/inf; they are written as null
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.complexfloating):
        obj = complex(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, two-space indent, trailing newline)."""
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def fingerprint(obj) -> str:
    """SHA-256 of the deterministic JSON form of ``obj`` (or of raw bytes)."""
    data = obj if isinstance(obj, bytes) else dumps(obj).encode()
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# power-system configuration
# ---------------------------------------------------------------------------

def config_to_dict(cfg: PowerSystemConfig) -> dict:
    d = {
        "generators": [asdict(gen) for gen in cfg.generators],
        "n_bus": cfg.n_bus,
        "lines": [asdict(ln) for ln in cfg.lines],
        "tie_lines": list(cfg.tie_lines),
        "load_shunts": [[complex(s).real, complex(s).imag] for s in cfg.load_shunts],
        "dispatch": list(cfg.dispatch),
        "agc": [asdict(a) for a in cfg.agc],
        "f0": cfg.f0,
        "S_base": cfg.S_base,
        "p_limit": cfg.p_limit,
        "agc_limit": cfg.agc_limit,
    }
    return _clean(d)


def config_from_dict(d: dict) -> PowerSystemConfig:
    """Rebuild a configuration; keys missing from ``d`` keep the default system's values."""
    base = config_to_dict(default_config())
    unknown = set(d) - set(base)
    if unknown:
        raise ModelFileError(f"unknown configuration keys: {sorted(unknown)}")
    merged = {**base, **d}
    try:
        agc = tuple(AgcData(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in a.items()})
                    for a in merged["agc"])
        return PowerSystemConfig(
            generators=tuple(GeneratorData(**g) for g in merged["generators"]),
            n_bus=int(merged["n_bus"]),
            lines=tuple(Line(**ln) for ln in merged["lines"]),
            tie_lines=tuple(int(i) for i in merged["tie_lines"]),
            load_shunts=tuple(complex(re, im) for re, im in merged["load_shunts"]),
            dispatch=tuple(float(x) for x in merged["dispatch"]),
            agc=agc,
            f0=float(merged["f0"]),
            S_base=float(merged["S_base"]),
            p_limit=float(merged["p_limit"]),
            agc_limit=float(merged["agc_limit"]),
        )
    except (TypeError, KeyError, ValueError) as exc:
        raise ModelFileError(f"invalid power-system configuration: {exc}") from exc


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

class LoadedModel:
    """A parsed model file: always a DAE model, plus the ODE when the file describes one."""

    def __init__(self, model: NonlinearDaeModel, ode: OdeSystem | None, source: dict):
        self.model = model
        self.ode = ode
        self.source = source

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.source)


def _poly(d, name) -> PolyMatrix:
    try:
        c = np.asarray(d[name], dtype=float)
    except KeyError as exc:
        raise ModelFileError(f"missing polynomial matrix {name!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ModelFileError(f"{name}: coefficients must be numeric nested arrays ({exc})") from exc
    if c.ndim == 2:
        c = c[None]
    if c.ndim != 3:
        raise ModelFileError(f"{name}: expected shape (degree+1, rows, cols), got {c.shape}")
    return PolyMatrix(c)


def model_from_dict(d: dict) -> LoadedModel:
    """Parse a model description.

    Schemas
    -------
    ``{"kind": "polynomial", "H": [...], "L": [...], "F": [...]}``
        coefficient arrays of shape ``(degree + 1, rows, cols)``, ascending powers.
    ``{"kind": "ode", "evaluator": "two_area", "params": {...}}``
        the built-in power-system model; ``params`` overrides the default configuration.
    ``{"kind": "ode", "evaluator": "linear", "params": {"A", "B_d", "B_f", "C"}}``
        linear ODE around the origin.
    """
    if not isinstance(d, dict):
        raise ModelFileError("model file must hold a JSON object")
    kind = d.get("kind")
    try:
        if kind == "polynomial":
            H, L, F = _poly(d, "H"), _poly(d, "L"), _poly(d, "F")
            return LoadedModel(NonlinearDaeModel(H, L, F), None, d)
        if kind == "ode":
            ev = d.get("evaluator")
            params = d.get("params", {}) or {}
            if ev == "two_area":
                sys = build_two_area_model(config_from_dict(params))
            elif ev == "linear":
                try:
                    A = np.asarray(params["A"], dtype=float)
                    sys = linear_ode(A, params["B_d"], params["B_f"], params["C"])
                except KeyError as exc:
                    raise ModelFileError(f"linear evaluator needs parameter {exc}") from exc
                sys = sys.with_equilibrium(np.zeros(A.shape[0]))
            else:
                raise ModelFileError(f"unknown ODE evaluator {ev!r}")
            return LoadedModel(ode_to_dae(sys), sys, d)
    except ModelFileError:
        raise
    except (ValueError, TypeError) as exc:
        raise ModelFileError(str(exc)) from exc
    raise ModelFileError(f"unknown model kind {kind!r}; expected 'polynomial' or 'ode'")


def load_model(path) -> LoadedModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return model_from_dict(d)


def model_to_dict(model: NonlinearDaeModel) -> dict:
    """Polynomial form of any model (the nonlinearity is not serialized)."""
    return {"kind": "polynomial", "H": model.H.to_list(), "L": model.L.to_list(),
            "F": model.F.to_list()}


# ---------------------------------------------------------------------------
# synthesis results
# ---------------------------------------------------------------------------

def result_to_dict(res: SynthesisResult) -> dict:
    return _clean({
        "Nbar": res.filter.Nbar,
        "d_N": res.filter.d_N,
        "a": res.filter.a_coeffs,
        "gamma_star": res.gamma_star,
        "stage1_gamma": res.stage1_gamma,
        "branch": {"j": res.active_branch.j, "sign": res.active_branch.sign},
        "perspective": res.perspective,
        "diagnostics": res.diagnostics,
    })


def _num(v) -> float:
    return float("nan") if v is None else float(v)


def result_from_dict(d: dict) -> SynthesisResult:
    try:
        filt = FilterCoefficients(np.asarray(d["Nbar"], dtype=float), int(d["d_N"]),
                                  np.asarray(d["a"], dtype=float))
        br = Branch(int(d["branch"]["j"]), int(d["branch"]["sign"]))
        return SynthesisResult(filt, _num(d["gamma_star"]), _num(d["stage1_gamma"]), br,
                               str(d["perspective"]), dict(d.get("diagnostics", {})))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed synthesis result: {exc}") from exc


def save_result(res: SynthesisResult, path, extra: dict | None = None) -> None:
    d = result_to_dict(res)
    if extra:
        d["context"] = _clean(extra)
    Path(path).write_text(dumps(d))


def load_result(path) -> SynthesisResult:
    try:
        return result_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFileError(f"cannot read synthesis result {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# signature matrices
# ---------------------------------------------------------------------------

def save_signature(sig: SignatureMatrix, path) -> None:
    """Dense text matrix preceded by ``# key: value`` header lines."""
    lines = [f"# provenance: {sig.provenance}", f"# horizon: {sig.horizon!r}",
             f"# scenario: {sig.scenario_id if sig.scenario_id is not None else ''}",
             f"# dim: {sig.dim}"]
    for key in sorted(sig.meta):
        lines.append(f"# meta.{key}: {json.dumps(_clean(sig.meta[key]))}")
    for row in sig.Q:
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_signature(path) -> SignatureMatrix:
    header: dict[str, Any] = {}
    meta = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(":")
            val = val.strip()
            if key.startswith("meta."):
                meta[key[5:]] = json.loads(val)
            else:
                header[key] = val
        elif line.strip():
            rows.append([float(x) for x in line.split()])
    dim = int(header.get("dim", len(rows)))
    Q = np.array(rows, dtype=float).reshape(dim, dim)
    return SignatureMatrix(Q, header.get("provenance", "basis"), float(header.get("horizon", "nan")),
                           header.get("scenario") or None, meta)
