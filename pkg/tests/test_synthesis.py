import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from scenario_fdi.dae import NonlinearDaeModel, stack_system
from scenario_fdi.errors import AllBranchesInfeasible, ImproperTransferFunction, NonPsdInput, \
    UnstableDenominator
from scenario_fdi.polymatrix import PolyMatrix
from scenario_fdi.synthesis import (Branch, FilterCoefficients, PayoffSpec, ScenarioParams,
                                    feasible_filter, lp_branches, max_sensitivity_filter,
                                    null_space_basis, robust_filter_qp, sample_complexity,
                                    two_stage_average, two_stage_chance)

from conftest import poly, random_model

A2 = [2.0, 1.0]            # a(p) = p + 2
HAND = np.array([-1.0, 1.0, 0.0, 1.0])   # N(p) = [-1, 1 + p]


def _cos(u, v):
    return abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))


def _check_generator(model, res_or_filt, d_N, tol=1e-8):
    filt = getattr(res_or_filt, "filter", res_or_filt)
    st_ = stack_system(model.H, model.F, d_N)
    h, f = filt.residual_norms(st_)
    assert h <= tol
    assert f >= 1 - tol


def _psd(rng, dim, rank=None):
    M = rng.normal(size=(dim, rank or dim))
    return M @ M.T


# -- branches ------------------------------------------------------------------

def test_branch_count_small(toy_model):
    st_ = stack_system(toy_model.H, toy_model.F, 1)
    br = lp_branches(st_)
    assert st_.m == 2 and len(br) == 4
    assert br[:2] == [Branch(1, 1), Branch(1, -1)]


def test_branch_count_larger():
    F = PolyMatrix(np.ones((2, 3, 2)))
    H = PolyMatrix(np.ones((1, 3, 1)))
    st_ = stack_system(H, F, 7)
    assert st_.m == 18 and len(lp_branches(st_)) == 36


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_feasible_point_hits_a_branch(seed):
    rng = np.random.default_rng(seed)
    Fbar = rng.normal(size=(6, 4))
    N = rng.normal(size=6)
    v = N @ Fbar
    assume(np.max(np.abs(v)) > 1e-6)
    N = N / np.max(np.abs(v)) * rng.uniform(1, 3)
    v = N @ Fbar
    assert any(s * v[j] >= 1 - 1e-12 for j in range(4) for s in (1, -1))


# -- LP programs ----------------------------------------------------------------

def test_feasible_filter_hand_oracle(toy_model):
    filt = feasible_filter(toy_model, 1, A2)
    assert _cos(filt.Nbar, HAND) >= 1 - 1e-9
    _check_generator(toy_model, filt, 1)


def test_feasible_filter_zero_fault(toy_model):
    m = NonlinearDaeModel(toy_model.H, toy_model.L, poly([[0.0], [0.0]]))
    with pytest.raises(AllBranchesInfeasible):
        feasible_filter(m, 1, A2)


def test_feasible_filter_degree_too_low(toy_model):
    with pytest.raises(AllBranchesInfeasible):
        feasible_filter(toy_model, 0, [2.0])


def test_max_sensitivity_hand(toy_model):
    res = max_sensitivity_filter(toy_model, 1, A2)
    assert res.diagnostics["objective"] == pytest.approx(1.0, abs=1e-9)
    assert _cos(res.filter.Nbar, HAND) >= 1 - 1e-9
    assert np.max(np.abs(res.filter.Nbar)) == pytest.approx(1.0, abs=1e-9)
    assert res.active_branch.j == 1
    _check_generator(toy_model, res, 1)


def test_max_sensitivity_unreachable_fault(toy_model):
    # F lies in the column span of H, so every residual generator cancels it
    m = NonlinearDaeModel(toy_model.H, toy_model.L, toy_model.H)
    with pytest.raises(AllBranchesInfeasible):
        max_sensitivity_filter(m, 1, A2)


def test_max_sensitivity_sign_symmetry():
    rng = np.random.default_rng(4)
    m = random_model(rng, n_r=5, d_H=1, n_f=1)
    neg = NonlinearDaeModel(m.H, m.L, -m.F)
    r1, r2 = max_sensitivity_filter(m, 2, A2 and [8.0, 12.0, 6.0, 1.0]), \
        max_sensitivity_filter(neg, 2, [8.0, 12.0, 6.0, 1.0])
    assert r1.diagnostics["objective"] == pytest.approx(r2.diagnostics["objective"], rel=1e-8)


def test_unstable_or_improper_denominator(toy_model):
    with pytest.raises(UnstableDenominator):
        max_sensitivity_filter(toy_model, 1, [-2.0, 1.0])
    with pytest.raises(ImproperTransferFunction):
        max_sensitivity_filter(toy_model, 1, [2.0])


def test_null_space_basis_orthonormal():
    rng = np.random.default_rng(0)
    Hbar = rng.normal(size=(7, 3))
    Z = null_space_basis(Hbar)
    assert Z.shape == (7, 4)
    assert np.allclose(Z.T @ Z, np.eye(4), atol=1e-12)
    assert np.max(np.abs(Z.T @ Hbar)) < 1e-12


# -- quadratic programs -----------------------------------------------------------

def test_qp_zero_q(toy_model):
    res = robust_filter_qp(toy_model, 1, A2, np.zeros((4, 4)))
    assert res.gamma_star == 0.0
    _check_generator(toy_model, res, 1)


def _least_norm_kkt(Z, c):
    """min ||Z y||^2 s.t. c^T y = 1 via the KKT system (Z orthonormal so ||Zy|| = ||y||)."""
    r = Z.shape[1]
    K = np.block([[2 * np.eye(r), -c[:, None]], [c[None, :], np.zeros((1, 1))]])
    sol = np.linalg.solve(K, np.append(np.zeros(r), 1.0))
    return float(sol[:r] @ sol[:r])


def test_qp_identity_matches_kkt():
    rng = np.random.default_rng(5)
    m = random_model(rng, n_r=6, d_H=1, n_f=1)
    d_N = 2
    res = robust_filter_qp(m, d_N, [8.0, 12.0, 6.0, 1.0], np.eye(6 * 3))
    st_ = stack_system(m.H, m.F, d_N)
    Z = null_space_basis(st_.Hbar)
    c = Z.T @ st_.Fbar
    best = min(_least_norm_kkt(Z, c[:, j]) for j in range(st_.m) if np.linalg.norm(c[:, j]) > 1e-9)
    assert res.gamma_star > 0
    assert res.gamma_star == pytest.approx(best, rel=1e-8)


def test_qp_decoupled_signature_gives_zero(toy_model):
    N = HAND
    rng = np.random.default_rng(6)
    # signatures living in the orthogonal complement of the hand filter
    P = np.eye(4) - np.outer(N, N) / (N @ N)
    Q = P @ _psd(rng, 4) @ P
    res = robust_filter_qp(toy_model, 1, A2, Q)
    assert res.gamma_star <= 1e-12 * np.linalg.norm(Q, 2)


def test_qp_rejects_indefinite(toy_model):
    with pytest.raises(NonPsdInput):
        robust_filter_qp(toy_model, 1, A2, -np.eye(4))


def test_average_zero_scenario(toy_model):
    res = two_stage_average(toy_model, 1, A2, [np.zeros((4, 4))])
    assert res.gamma_star == 0.0
    _check_generator(toy_model, res, 1)


def test_average_equals_qp_on_mean():
    rng = np.random.default_rng(7)
    m = random_model(rng, n_r=5, d_H=1, n_f=1)
    a = [8.0, 12.0, 6.0, 1.0]
    Qs = [_psd(rng, 15, 3) for _ in range(12)]
    ap = two_stage_average(m, 2, a, Qs, stage2=False)
    qp = robust_filter_qp(m, 2, a, np.mean(Qs, axis=0))
    assert ap.gamma_star == pytest.approx(qp.gamma_star, rel=1e-6)


def test_average_scaling_homogeneous():
    rng = np.random.default_rng(8)
    m = random_model(rng, n_r=5, d_H=1, n_f=1)
    a = [8.0, 12.0, 6.0, 1.0]
    Qs = [_psd(rng, 15, 2) for _ in range(4)]
    r1 = two_stage_average(m, 2, a, Qs, stage2=False)
    r2 = two_stage_average(m, 2, a, [3.5 * Q for Q in Qs], stage2=False)
    assert r2.gamma_star == pytest.approx(3.5 * r1.gamma_star, rel=1e-8)
    assert _cos(r1.filter.Nbar, r2.filter.Nbar) >= 1 - 1e-8


def test_linear_payoff_not_implemented(toy_model):
    with pytest.raises(NotImplementedError):
        two_stage_average(toy_model, 1, A2, [np.eye(4)], PayoffSpec("linear"))


def test_chance_identical_scenarios_match_qp():
    rng = np.random.default_rng(9)
    m = random_model(rng, n_r=4, d_H=1, n_f=1)
    a = [4.0, 4.0, 1.0]
    Q = _psd(rng, 8)
    cp_ = two_stage_chance(m, 1, a, [Q, Q, Q], stage2=False)
    qp = robust_filter_qp(m, 1, a, Q)
    assert cp_.gamma_star == pytest.approx(qp.gamma_star, rel=1e-5)


def test_chance_dominating_scenario():
    rng = np.random.default_rng(10)
    m = random_model(rng, n_r=4, d_H=1, n_f=1)
    a = [4.0, 4.0, 1.0]
    Q1 = _psd(rng, 8) + 5 * np.eye(8)
    small = [0.1 * _psd(rng, 8, 2) for _ in range(3)]
    small = [S * min(1.0, 1.0 / np.linalg.norm(S, 2)) for S in small]  # Q1 - S is PSD
    with_all = two_stage_chance(m, 1, a, [Q1] + small, stage2=False)
    alone = robust_filter_qp(m, 1, a, Q1)
    assert with_all.gamma_star == pytest.approx(alone.gamma_star, rel=1e-5)


def test_chance_needs_scenarios(toy_model):
    with pytest.raises(ValueError):
        two_stage_chance(toy_model, 1, A2, [])


def test_chance_dominates_average():
    rng = np.random.default_rng(11)
    m = random_model(rng, n_r=4, d_H=1, n_f=1)
    a = [4.0, 4.0, 1.0]
    Qs = [_psd(rng, 8, 2) for _ in range(6)]
    cp_ = two_stage_chance(m, 1, a, Qs)
    ap = two_stage_average(m, 1, a, Qs)
    assert cp_.gamma_star >= ap.gamma_star * (1 - 1e-6)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["ap", "cp"]))
def test_two_stage_certificates(seed, kind):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n_r=int(rng.integers(3, 6)), d_H=1, n_f=1)
    d_N = 1
    a = [4.0, 4.0, 1.0]
    dim = m.n_r * 2
    Qs = [_psd(rng, dim, int(rng.integers(1, dim + 1))) for _ in range(int(rng.integers(1, 6)))]
    fn = two_stage_average if kind == "ap" else two_stage_chance
    try:
        res = fn(m, d_N, a, Qs)
    except AllBranchesInfeasible:
        assume(False)
    vals = [res.filter.Nbar @ Q @ res.filter.Nbar for Q in Qs]
    agg = np.mean(vals) if kind == "ap" else np.max(vals)
    assert agg <= res.gamma_star * (1 + 1e-6) + 1e-12
    assert res.gamma_star >= 0
    _check_generator(m, res, d_N)


# -- filter coefficients --------------------------------------------------------

def test_filter_coefficients_validation():
    with pytest.raises(ValueError):
        FilterCoefficients(np.ones(5), 1, A2)
    f = FilterCoefficients(HAND, 1, A2)
    assert f.n_r == 2 and f.N.shape == (1, 2) and f.N.degree == 1
    assert np.array_equal(f.scaled(-1).Nbar, -HAND)


# -- sample complexity ----------------------------------------------------------

def test_sample_complexity_examples():
    assert sample_complexity(ScenarioParams(0.1, 0.01, 4, 1, 3, 0)) == 460
    assert sample_complexity(ScenarioParams(0.05, 0.01, 4, 1, 3, 0)) == 920


def test_sample_complexity_beta_limit():
    limit = 20 * (2 * 1 + 1 + math.log(1))    # (2/eps)(n_r (d_N+1) + 1 + ln m), m = 1
    for beta in (0.9, 0.999, 1 - 1e-9):
        n = sample_complexity(ScenarioParams(0.1, beta, 2, 1, 0, 0))
        assert limit <= n <= math.ceil(20 * (3 + math.log(1 / beta)))
    assert sample_complexity(ScenarioParams(0.1, 1 - 1e-9, 2, 1, 0, 0)) <= limit + 1


def test_sample_complexity_rejects_bad_levels():
    for eps, beta in ((0.0, 0.1), (1.0, 0.1), (0.1, 0.0), (0.1, 1.5)):
        with pytest.raises(ValueError):
            ScenarioParams(eps, beta, 1, 1, 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.9), st.floats(0.001, 0.9), st.integers(1, 10), st.integers(1, 3),
       st.integers(0, 8), st.integers(0, 2), st.sampled_from(["eps", "beta", "d_N", "n_r", "n_f", "d_F"]))
def test_sample_complexity_monotone(eps, beta, n_r, n_f, d_N, d_F, which):
    base = ScenarioParams(eps, beta, n_r, n_f, d_N, d_F)
    n0 = sample_complexity(base)
    kw = dict(epsilon=eps, beta=beta, n_r=n_r, n_f=n_f, d_N=d_N, d_F=d_F)
    if which == "eps":
        kw["epsilon"] = min(eps * 1.5, 0.99)
        assert sample_complexity(ScenarioParams(**kw)) <= n0
    elif which == "beta":
        kw["beta"] = min(beta * 1.5, 0.99)
        assert sample_complexity(ScenarioParams(**kw)) <= n0
    else:
        kw[which] += 1
        assert sample_complexity(ScenarioParams(**kw)) >= n0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.5), st.floats(0.001, 0.5), st.integers(1, 10), st.integers(0, 8))
def test_halving_epsilon_at_least_doubles(eps, beta, n_r, d_N):
    n1 = sample_complexity(ScenarioParams(eps, beta, n_r, 1, d_N))
    n2 = sample_complexity(ScenarioParams(eps / 2, beta, n_r, 1, d_N))
    assert n2 >= 2 * n1 - 1
