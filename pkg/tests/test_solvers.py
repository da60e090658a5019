import math

import numpy as np
import pytest

from helpers import lambda_max_oracle, rng
from learntv.data import generate
from learntv.operators import differentiate, tv_norm
from learntv.solvers import (
    DUAL_METHODS,
    METHODS,
    TVProblem,
    best_constant,
    condition_gamma,
    inexact_budget,
    lambda_max,
    objective_analysis,
    objective_synthesis,
    reference_solution,
    solve,
)


@pytest.fixture(scope="module")
def square_problem():
    ds = generate(20, 10, 12, 2, 1.0, seed=5)
    return TVProblem(ds.A, ds.X, 0.3 * lambda_max(ds.A, ds.X))


def test_problem_validation():
    A = np.ones((3, 4))
    with pytest.raises(ValueError):
        TVProblem(A, np.ones(4), 0.1)
    with pytest.raises(ValueError):
        TVProblem(A, np.ones(3), -0.1)
    with pytest.raises(ValueError):
        TVProblem(A, np.ones((5, 3)), np.ones(4))
    with pytest.raises(ValueError):
        TVProblem(np.ones(3), np.ones(3), 0.1)


def test_objectives_agree_across_parametrizations(square_problem):
    p = square_problem
    u = rng(0).standard_normal((p.x.shape[0], p.k))
    assert np.allclose(objective_analysis(p, u), objective_synthesis(p, differentiate(u)))
    expected = 0.5 * np.sum((p.x - u @ p.A.T) ** 2, axis=1) + p.lam * tv_norm(u)
    assert np.allclose(objective_analysis(p, u), expected)


@pytest.mark.parametrize("method", METHODS)
def test_trace_shape_and_start(square_problem, method):
    p = square_problem
    res = solve(p, method, 7)
    assert res.trace.objectives.shape == (8, p.x.shape[0])
    assert res.trace.iterations == 7
    assert np.allclose(res.trace.objectives[0], objective_analysis(p, p.default_u0()))
    assert np.allclose(res.trace.objectives[-1], objective_analysis(p, res.u))


def test_zero_iterations_returns_start(square_problem):
    u0 = np.zeros((square_problem.x.shape[0], square_problem.k))
    assert np.array_equal(solve(square_problem, "pgd_analysis", 0, u0=u0).u, u0)


def test_unknown_method(square_problem):
    with pytest.raises(ValueError):
        solve(square_problem, "admm", 3)
    with pytest.raises(ValueError):
        solve(square_problem, "pgd_analysis", -1)


def test_pgd_is_monotone(square_problem):
    obj = solve(square_problem, "pgd_analysis", 300).trace.objectives
    assert np.all(np.diff(obj, axis=0) <= 1e-12 * np.abs(obj[:-1]))


def test_dual_iterates_stay_in_the_box(square_problem):
    lam = square_problem.lam_col()
    worst = []
    for method in ("dual_pgd", "dual_apgd", "primal_dual"):
        solve(square_problem, method, 200, dual_callback=lambda v: worst.append(np.max(np.abs(v) - lam)))
    assert len(worst) == 600
    assert max(worst) <= 1e-12


def test_dual_rejects_rank_deficient_design():
    ds = generate(4, 8, 5, 2, 1.0, seed=1)
    p = TVProblem(ds.A, ds.X, 0.1)
    for method in DUAL_METHODS:
        with pytest.raises(ValueError):
            solve(p, method, 3)


def test_all_solvers_reach_the_reference(square_problem):
    p = square_problem
    pstar = objective_analysis(p, reference_solution(p, 20_000).u)
    for method in ("pgd_analysis", "apgd_analysis", "fista_synthesis", "primal_dual", "dual_apgd"):
        final = objective_analysis(p, solve(p, method, 20_000, trace=False).u)
        assert np.all(final - pstar <= 1e-6 * np.abs(pstar)), method
        assert np.all(final - pstar >= -1e-9 * np.abs(pstar)), method


def test_rate_certificates(square_problem):
    p = square_problem
    ref = reference_solution(p, 20_000)
    pstar = objective_analysis(p, ref.u)
    d0 = np.sum((p.default_u0() - ref.u) ** 2, axis=1)
    t = np.arange(1, 201)[:, None]
    gap = solve(p, "pgd_analysis", 200).trace.objectives[1:] - pstar
    assert np.all(gap <= p.rho * d0 / (2 * t) + 1e-9)
    gap = solve(p, "ista_synthesis", 200).trace.objectives[1:] - pstar
    assert np.all(gap <= 2 * p.rho_synthesis * d0 / t + 1e-9)


def test_lambda_max_matches_oracle():
    g = rng(2)
    for _ in range(20):
        A = g.standard_normal((6, 9))
        x = g.standard_normal(6)
        assert lambda_max(A, x) == pytest.approx(lambda_max_oracle(A, x), rel=1e-12)


def test_lambda_max_threshold_behaviour():
    g = rng(3)
    A = g.standard_normal((5, 8))
    x = g.standard_normal((10, 5))
    lm = lambda_max(A, x)
    above = solve(TVProblem(A, x, 1.01 * lm), "apgd_analysis", 5000, trace=False).u
    below = solve(TVProblem(A, x, 0.9 * lm), "apgd_analysis", 5000, trace=False).u
    assert np.all(tv_norm(above) < 1e-8)
    assert np.all(tv_norm(below) > 1e-6)
    c, _ = best_constant(A, x)
    assert np.allclose(above, c[:, None], atol=1e-8)


def test_best_constant_rejects_degenerate_design():
    A = np.array([[1.0, -1.0], [2.0, -2.0]])
    with pytest.raises(ValueError):
        best_constant(A, np.ones(2))


def test_budget_example():
    rep = inexact_budget(0.01, 1, 0.5, 1, 1)
    assert (rep.T, rep.T_in) == (200, 10)
    assert rep.T_in_raw == pytest.approx(9.7288, abs=1e-4)
    half = inexact_budget(0.005, 1, 0.5, 1, 1)
    assert half.T_raw == pytest.approx(2 * rep.T_raw, rel=1e-15)
    t_in = [inexact_budget(0.01, 1, g, 1, 1).T_in_raw for g in (0.1, 0.5, 0.9)]
    assert t_in[0] > t_in[1] > t_in[2]


@pytest.mark.parametrize("args", [(0, 1, 0.5, 1, 1), (0.1, -1, 0.5, 1, 1), (0.1, 1, 1.0, 1, 1), (0.1, 1, 0.0, 1, 1), (0.1, 1, 0.5, 0, 1)])
def test_budget_domain(args):
    with pytest.raises(ValueError):
        inexact_budget(*args)


def test_condition_gamma_formula():
    assert condition_gamma(1) == pytest.approx(1 / math.sqrt(3), rel=1e-12)
    assert condition_gamma(8) == pytest.approx(5.34953, abs=1e-5)
    assert all(condition_gamma(k) < condition_gamma(k + 1) for k in range(1, 30))
    with pytest.raises(ValueError):
        condition_gamma(0)
