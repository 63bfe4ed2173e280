import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenario_fdi.errors import ModelFileError
from scenario_fdi.io import (config_from_dict, config_to_dict, dumps, fingerprint, load_model,
                             load_result, load_signature, model_from_dict, model_to_dict, save_result,
                             save_signature)
from scenario_fdi.power import default_config
from scenario_fdi.signature import SignatureMatrix
from scenario_fdi.synthesis import robust_filter_qp


def test_polynomial_model_roundtrip(toy_model, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps(model_to_dict(toy_model)))
    back = load_model(path).model
    for name in ("H", "L", "F"):
        assert np.array_equal(getattr(back, name).coeffs, getattr(toy_model, name).coeffs)
    assert back.n_r == toy_model.n_r


def test_two_area_model_from_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"kind": "ode", "evaluator": "two_area", "params": {}}))
    loaded = load_model(path)
    assert loaded.ode is not None and loaded.model.n_f == 1
    assert loaded.fingerprint == load_model(path).fingerprint


def test_linear_model_from_dict():
    d = {"kind": "ode", "evaluator": "linear",
         "params": {"A": [[-1.0]], "B_d": [[1.0]], "B_f": [[1.0]], "C": [[1.0]]}}
    loaded = model_from_dict(d)
    assert loaded.model.n_r == 2 and np.allclose(loaded.ode.X_e, 0)


@pytest.mark.parametrize("text", [
    "{not json",
    "[]",
    '{"kind": "spline"}',
    '{"kind": "polynomial", "H": [[[1]]], "L": [[[1]]]}',
    '{"kind": "polynomial", "H": "abc", "L": [[[1]]], "F": [[[1]]]}',
    '{"kind": "ode", "evaluator": "linear", "params": {"A": [[1]]}}',
    '{"kind": "ode", "evaluator": "unknown"}',
])
def test_malformed_model_files(tmp_path, text):
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ModelFileError):
        load_model(path)


def test_missing_model_file(tmp_path):
    with pytest.raises(ModelFileError):
        load_model(tmp_path / "absent.json")


def test_config_roundtrip():
    cfg = default_config()
    assert config_from_dict(json.loads(dumps(config_to_dict(cfg)))) == cfg


def test_result_roundtrip(toy_model, tmp_path):
    res = robust_filter_qp(toy_model, 1, [1.0, 1.0], np.eye(4))
    res.diagnostics["note"] = float("nan")
    save_result(res, tmp_path / "r.json", extra={"seed": 3})
    back = load_result(tmp_path / "r.json")
    assert np.array_equal(back.filter.Nbar, res.filter.Nbar)
    assert back.gamma_star == res.gamma_star and back.perspective == res.perspective
    assert back.active_branch == res.active_branch
    assert back.diagnostics["note"] is None
    json.loads((tmp_path / "r.json").read_text())   # strict JSON, no NaN tokens


def test_result_missing_gamma_reads_as_nan(toy_model, tmp_path):
    res = robust_filter_qp(toy_model, 1, [1.0, 1.0], np.eye(4))
    save_result(res, tmp_path / "r.json")
    d = json.loads((tmp_path / "r.json").read_text())
    d["gamma_star"] = None
    (tmp_path / "r.json").write_text(json.dumps(d))
    assert np.isnan(load_result(tmp_path / "r.json").gamma_star)


def test_malformed_result(tmp_path):
    (tmp_path / "r.json").write_text('{"Nbar": [1, 2]}')
    with pytest.raises(ModelFileError):
        load_result(tmp_path / "r.json")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_signature_roundtrip_is_exact(dim, seed):
    import tempfile
    from pathlib import Path
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(dim, dim)) * 10.0 ** rng.integers(-8, 9)
    sig = SignatureMatrix(M @ M.T, "exact", 10.0, "s00001", {"node": 2})
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "q.txt"
        save_signature(sig, path)
        back = load_signature(path)
    assert np.array_equal(back.Q, sig.Q)
    assert (back.provenance, back.horizon, back.scenario_id, back.meta) == ("exact", 10.0, "s00001", {"node": 2})


def test_dumps_is_canonical():
    a = dumps({"b": np.float64(1.5), "a": np.arange(3), "c": complex(1, 2), "d": float("inf")})
    b = dumps({"d": float("inf"), "c": complex(1, 2), "a": [0, 1, 2], "b": 1.5})
    assert a == b and json.loads(a)["d"] is None
    assert fingerprint(a.encode()) == fingerprint(b.encode())

