from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causal_mdp import env, opt
from causal_mdp.opt import MinMaxProblem


def family(k):
    return env.make_lower_bound_instance(k).transitions


def test_objective_examples():
    assert opt.objective(MinMaxProblem(np.ones((3, 1)), [4.0]), np.array([0.2, 0.3, 0.5])) == pytest.approx(2.0)
    P = family(2)  # rows: do()->2, X1=0 ->2, X1=1 ->1
    f = np.array([0.25, 0.25, 0.5])
    assert opt.objective(MinMaxProblem(P, [1, 1]), f) == pytest.approx(math.sqrt(2))
    assert opt.objective(MinMaxProblem(P, [1, 1]), np.array([0.5, 0.5, 0.0])) == math.inf


def test_problem_rejects_zero_column():
    P = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(env.UnreachableState):
        MinMaxProblem(P, [1, 1])


@pytest.mark.parametrize("seed", range(3))
def test_closed_form_on_deterministic_family(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 9))
    m = rng.integers(1, 11, size=k).astype(float)
    rep = opt.solve_min_max(MinMaxProblem(family(k), m))
    assert rep.converged
    assert rep.objective_value**2 == pytest.approx(m.sum(), abs=1e-3)
    assert rep.certified_gap <= 1e-4


def test_minimizer_is_proportional_to_m():
    m = np.array([2.0, 2.0, 2.0])
    rep = opt.solve_min_max(MinMaxProblem(family(3), m), tol=1e-8)
    f = rep.minimizer
    assert rep.objective_value**2 == pytest.approx(6.0, abs=1e-3)
    # rows 2 and 4 reach states 1 and 2; the other three are pooled onto state 3
    assert f[2] == pytest.approx(1 / 3, abs=1e-3)
    assert f[4] == pytest.approx(1 / 3, abs=1e-3)
    assert f[[0, 1, 3]].sum() == pytest.approx(1 / 3, abs=1e-3)


def test_single_state():
    rep = opt.solve_min_max(MinMaxProblem(np.ones((4, 1)), [3.0]))
    assert rep.objective_value**2 == pytest.approx(3.0)


def test_report_consistency_and_positivity():
    rng = np.random.default_rng(0)
    P = rng.dirichlet(np.ones(4), size=9)
    prob = MinMaxProblem(P, rng.uniform(1, 4, 4))
    for polish in (True, False):
        rep = opt.solve_min_max(prob, max_iters=5000, polish=polish)
        assert abs(rep.objective_value - opt.objective(prob, rep.minimizer)) < 1e-10
        assert rep.minimizer.min() > 0
        assert rep.minimizer.sum() == pytest.approx(1.0, abs=1e-12)
        assert rep.lower_bound**2 <= rep.objective_value**2 + 1e-12


def test_lower_bound_is_valid_against_oracle():
    rng = np.random.default_rng(5)
    for _ in range(10):
        P = rng.dirichlet(np.ones(3), size=int(rng.integers(2, 8)))
        prob = MinMaxProblem(P, rng.uniform(1, 4, 3))
        rep = opt.solve_min_max(prob)
        val, f = opt.grid_oracle(prob, 0.01)
        assert max(rep.lower_bound, 0) ** 2 <= val + 1e-9
        assert opt.objective(prob, f) ** 2 == pytest.approx(val)


@pytest.mark.parametrize("seed", range(5))
def test_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    prob = MinMaxProblem(rng.dirichlet(np.ones(3), size=7), rng.uniform(1, 4, 3))
    rep = opt.solve_min_max(prob)
    val, _ = opt.grid_oracle(prob, 0.005)
    assert rep.objective_value**2 == pytest.approx(val, abs=1e-2)


def test_grid_oracle_examples():
    val, f = opt.grid_oracle(MinMaxProblem(family(3), [2, 2, 2]), 0.01)
    assert abs(val - 6) / 6 < 0.02
    assert f.sum() == pytest.approx(1.0)
    val, _ = opt.grid_oracle(MinMaxProblem(np.ones((5, 1)), [7.0]), 0.1)
    assert val == pytest.approx(7.0)
    with pytest.raises(env.InvalidArgument):
        opt.grid_oracle(MinMaxProblem(np.ones((5, 1)), [7.0]), 0.5)


def test_pooling_identical_columns():
    P = np.array([[0.2, 0.2, 0.6], [0.5, 0.5, 0.0], [0.1, 0.1, 0.8]])
    cols, labels = opt.column_classes(P)
    assert cols.shape[1] == 2
    assert labels[0] == labels[1] != labels[2]
    rows, rlabels = opt.row_classes(np.vstack([P, P[0]]))
    assert rows.shape[0] == 3 and rlabels[0] == rlabels[3]


def test_grid_oracle_too_large():
    P = np.abs(np.random.default_rng(0).normal(size=(13, 12))) + 0.01
    P /= P.sum(axis=1, keepdims=True)
    with pytest.raises(opt.InfeasibleOracle):
        opt.grid_oracle(MinMaxProblem(P, np.ones(12)), 0.01)


def test_max_min_reach_examples():
    P = family(3)
    f = opt.solve_max_min_reach(P)
    assert opt.reach_value(P, f) == pytest.approx(1 / 3, abs=1e-8)
    assert (P.T @ f) == pytest.approx(np.full(3, 1 / 3), abs=1e-8)
    # the pooled mass on state 3 is spread over its three rows
    assert f[[0, 1, 3]] == pytest.approx(np.full(3, 1 / 9), abs=1e-6)
    f = opt.solve_max_min_reach(np.ones((4, 1)))
    assert opt.reach_value(np.ones((4, 1)), f) == pytest.approx(1.0)
    U = np.full((5, 4), 0.25)
    f = opt.solve_max_min_reach(U)
    assert opt.reach_value(U, f) == pytest.approx(0.25)
    assert f == pytest.approx(np.full(5, 0.2))  # everything ties, so entropy picks uniform
    with pytest.raises(env.UnreachableState):
        opt.solve_max_min_reach(np.array([[1.0, 0.0]]))


@pytest.mark.parametrize("k", [2, 3, 5, 8])
def test_max_min_reach_deterministic_family(k):
    f = opt.solve_max_min_reach(family(k))
    assert opt.reach_value(family(k), f) == pytest.approx(1 / k, abs=1e-8)


def test_max_min_reach_against_lp():
    from scipy.optimize import linprog

    rng = np.random.default_rng(3)
    for _ in range(10):
        N, k = int(rng.integers(2, 10)), int(rng.integers(1, 6))
        P = rng.dirichlet(np.ones(k) * 0.5, size=N)
        # maximize t subject to P^T f >= t on the simplex
        res = linprog(np.r_[np.zeros(N), -1.0], A_ub=np.hstack([-P.T, np.ones((k, 1))]), b_ub=np.zeros(k),
                      A_eq=np.r_[np.ones(N), 0.0][None], b_eq=[1.0], bounds=[(0, None)] * N + [(None, None)])
        f = opt.solve_max_min_reach(P)
        assert opt.reach_value(P, f) == pytest.approx(-res.fun, abs=1e-7)


def test_scaling_m_scales_squared_objective():
    rng = np.random.default_rng(1)
    P = rng.dirichlet(np.ones(3), size=5)
    m = rng.uniform(1, 4, 3)
    for _ in range(20):
        f = rng.dirichlet(np.ones(5))
        c = rng.uniform(0.1, 10)
        a = opt.objective(MinMaxProblem(P, m), f) ** 2
        b = opt.objective(MinMaxProblem(P, c * m), f) ** 2
        assert b == pytest.approx(c * a, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_chord_check_random_problems(seed):
    rng = np.random.default_rng(seed)
    k, N = int(rng.integers(1, 6)), int(rng.integers(1, 9))
    prob = MinMaxProblem(rng.dirichlet(np.ones(k), size=N), rng.uniform(1, 4, k))
    assert opt.convexity_chord_check(prob, 100, rng)


def test_chord_equal_points_and_single_row():
    rng = np.random.default_rng(0)
    prob = MinMaxProblem(np.array([[0.3, 0.7]]), [2.0, 5.0])
    assert opt.convexity_chord_check(prob, 500, rng)
    f = np.array([1.0])
    assert 0.5 * opt.objective(prob, f) * 2 - opt.objective(prob, f) == pytest.approx(0.0, abs=1e-12)


def test_solver_not_above_oracle_bound():
    """Squared objective never exceeds the oracle plus tolerance plus lattice slack."""
    rng = np.random.default_rng(11)
    for _ in range(15):
        k = int(rng.integers(1, 5))
        prob = MinMaxProblem(rng.dirichlet(np.ones(k), size=int(rng.integers(1, 6))), rng.uniform(1, 4, k))
        rep = opt.solve_min_max(prob)
        val, _ = opt.grid_oracle(prob, 0.02, refine=False)
        assert rep.objective_value**2 <= val + 1e-4 + 1e-9
