import numpy as np
import pytest

from scenario_fdi.dae import NonlinearDaeModel, ode_to_dae
from scenario_fdi.polymatrix import PolyMatrix


def poly(*coeffs):
    """PolyMatrix from ascending coefficient matrices given as nested lists."""
    return PolyMatrix(np.array(coeffs, dtype=float))


@pytest.fixture
def toy_model():
    """H = [p + 1; 1], F = [1; 0], L = [0; -1]: the smallest model with a hand-derivable filter."""
    H = poly([[1.0], [1.0]], [[1.0], [0.0]])
    F = poly([[1.0], [0.0]])
    L = poly([[0.0], [-1.0]])
    return NonlinearDaeModel(H, L, F)


def random_model(rng, n_r=None, d_H=None, n_f=None, n_x=None):
    """Random polynomial model with fewer unknowns than rows, so left null vectors exist."""
    n_r = int(rng.integers(2, 9)) if n_r is None else n_r
    d_H = int(rng.integers(0, 4)) if d_H is None else d_H
    n_x = int(rng.integers(1, max(2, n_r // 2 + 1))) if n_x is None else n_x
    n_f = int(rng.integers(1, 3)) if n_f is None else n_f
    H = PolyMatrix(rng.normal(size=(d_H + 1, n_r, n_x)))
    F = PolyMatrix(rng.normal(size=(1, n_r, n_f)))
    L = PolyMatrix(-np.eye(n_r)[None])
    return NonlinearDaeModel(H, L, F)


@pytest.fixture(scope="session")
def testbed():
    """Default two-area system and its DAE embedding (built once per session)."""
    from scenario_fdi.power import build_two_area_model, default_config

    sys_ = build_two_area_model(default_config())
    return sys_, ode_to_dae(sys_)


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance():
    """``acceptance(number, passed, detail)`` records one PASS/FAIL line for the final summary."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
