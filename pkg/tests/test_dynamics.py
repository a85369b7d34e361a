import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flqr import (
    ControlSignal,
    InvalidArgument,
    NumericOverflow,
    Position,
    Problem,
    build_grid,
    fundamental_matrix,
    mittag_leffler,
    solve_motion,
)
from flqr.dynamics import prepare_grid
from flqr.suites import random_problem

# mpmath references (30 digits, direct series)
E_07_07_AT_1 = 3.9507783307080956
E_07_1_AT_M1 = 0.39961197811559938


def test_mittag_leffler_references():
    assert mittag_leffler(0.7, 0.7, 1.0) == pytest.approx(E_07_07_AT_1, rel=1e-14)
    assert mittag_leffler(0.7, 1.0, -1.0) == pytest.approx(E_07_1_AT_M1, rel=1e-14)
    assert mittag_leffler(1.0, 1.0, 0.3) == pytest.approx(math.exp(0.3), rel=1e-15)
    assert mittag_leffler(0.6, 0.6, 0.0) == pytest.approx(1 / math.gamma(0.6), rel=1e-15)


def test_mittag_leffler_vector_and_matrix_arguments():
    z = np.array([-1.0, 0.0, 0.5])
    vec = mittag_leffler(0.8, 0.8, z)
    np.testing.assert_allclose(vec, [mittag_leffler(0.8, 0.8, float(v)) for v in z], rtol=1e-15)
    rng = np.random.default_rng(0)
    S = rng.standard_normal((3, 3))
    S = S + S.T
    lam, V = np.linalg.eigh(S)
    expected = V @ np.diag(mittag_leffler(0.8, 0.9, lam)) @ V.T
    np.testing.assert_allclose(mittag_leffler(0.8, 0.9, S), expected, rtol=1e-11, atol=1e-12)


def test_mittag_leffler_errors():
    with pytest.raises(InvalidArgument):
        mittag_leffler(0.0, 1.0, 1.0)
    with pytest.raises(InvalidArgument):
        mittag_leffler(0.7, 1.0, np.ones((2, 3)))
    with pytest.raises(NumericOverflow):
        mittag_leffler(0.7, 1.0, 1e6, max_terms=50)


def test_control_signal():
    u = ControlSignal([0.0, 0.5, 1.0], [[1.0], [2.0]])
    np.testing.assert_array_equal(u(np.array([0.0, 0.49, 0.5, 1.0]))[:, 0], [1, 1, 2, 2])
    np.testing.assert_array_equal(u.on_cells([0.0, 0.25, 0.75, 1.0])[:, 0], [1, 2, 2])
    with pytest.raises(InvalidArgument):
        ControlSignal([0.0, 1.0], [[1.0], [2.0]])
    with pytest.raises(InvalidArgument):
        ControlSignal([0.0, 1.0], [[np.nan]])


@pytest.mark.parametrize("A", [-1.0, 0.5])
def test_uncontrolled_motion_matches_mittag_leffler(A):
    alpha = 0.7
    prob = Problem(alpha, 1.0, [[A]], [[1.0]], [[0.0]], [[0.0]], [[1.0]])
    grid = build_grid(1.0, 256, 1.0)
    traj = solve_motion(prob, Position.initial(alpha, [1.0]), ControlSignal.zero(0.0, 1.0, 1), grid)
    exact = mittag_leffler(alpha, 1.0, A * traj.nodes**alpha)
    assert np.abs(traj.states[:, 0] - exact).max() <= 1e-4


def test_constant_control_motion_is_exact_without_drift():
    # A = 0: x(tau) = x0 + u tau^alpha / Gamma(alpha + 1)
    alpha = 0.75
    prob = Problem(alpha, 1.0, [[0.0]], [[2.0]], [[0.0]], [[0.0]], [[1.0]])
    traj = solve_motion(prob, Position.initial(alpha, [1.0]), ControlSignal.constant(0.0, 1.0, [0.5]), build_grid(1.0, 16))
    expected = 1.0 + 2.0 * 0.5 * traj.nodes**alpha / math.gamma(alpha + 1)
    np.testing.assert_allclose(traj.states[:, 0], expected, rtol=1e-13)


def test_motion_from_history_continues_it():
    prob = random_problem(3, n=2, m=1)
    grid = build_grid(1.0, 32)
    pos0 = prob.position([1.0, -1.0])
    u = ControlSignal([0.0, grid.nodes[10], 1.0], [[1.0], [-0.5]])
    full = solve_motion(prob, pos0, u, grid)
    mid = full.position_at(10)
    rest = ControlSignal(u.knots[1:], u.values[1:])
    tail = solve_motion(prob, mid, rest, grid)
    np.testing.assert_allclose(tail.states, full.states[10:], rtol=1e-12, atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 50))
def test_motion_is_affine_in_control(c1, c2, seed):
    prob = random_problem(seed, n=2, m=2)
    grid = build_grid(1.0, 16)
    pos = prob.position([0.3, -0.7])
    rng = np.random.default_rng(seed)
    knots = grid.nodes[::4]
    u1 = rng.standard_normal((knots.size - 1, 2))
    u2 = rng.standard_normal((knots.size - 1, 2))
    zero = solve_motion(prob, pos, ControlSignal(knots, 0 * u1), grid).states

    def resp(v):
        return solve_motion(prob, pos, ControlSignal(knots, v), grid).states - zero

    np.testing.assert_allclose(resp(c1 * u1 + c2 * u2), c1 * resp(u1) + c2 * resp(u2), atol=1e-10)


def test_batched_motion_matches_individual_runs():
    prob = random_problem(5, n=2, m=2)
    grid = build_grid(1.0, 16)
    pos = prob.position([1.0, 0.5], t=grid.nodes[4], f=[0.1, -0.2])
    knots = grid.nodes[4::3]
    vals = np.random.default_rng(1).standard_normal((knots.size - 1, 2, 3))
    batch = solve_motion(prob, pos, ControlSignal(knots, vals), grid)
    for b in range(3):
        one = solve_motion(prob, pos, ControlSignal(knots, vals[..., b]), grid)
        np.testing.assert_allclose(batch.states[..., b], one.states, rtol=1e-13, atol=1e-14)


def test_solve_motion_rejects_mismatched_control():
    prob = random_problem(0, n=1, m=1)
    grid = build_grid(1.0, 8)
    with pytest.raises(InvalidArgument):
        solve_motion(prob, prob.position([1.0]), ControlSignal([0.5, 1.0], [[0.0]]), grid)
    with pytest.raises(InvalidArgument):
        solve_motion(prob, prob.position([1.0]), ControlSignal.zero(0.0, 1.0, 2), grid)


def test_prepare_grid_keeps_grid_when_nodes_present():
    grid = build_grid(1.0, 8)
    assert prepare_grid(grid, grid.nodes[2:4]) is grid
    assert prepare_grid(grid, [0.123]).has_node(0.123)


def test_fundamental_matrix_zero_drift_is_exact():
    prob = Problem(0.65, 1.0, np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    tab = fundamental_matrix(prob, build_grid(1.0, 8))
    i, j = np.tril_indices(9)
    np.testing.assert_array_equal(tab.values[i, j], np.broadcast_to(np.eye(2) / math.gamma(0.65), (i.size, 2, 2)))
    with pytest.raises(InvalidArgument):
        tab(1, 2)


def test_fundamental_matrix_matches_matrix_mittag_leffler():
    alpha = 0.8
    A = np.array([[-1.0, 0.5], [0.0, -0.3]])
    prob = Problem(alpha, 1.0, A, np.eye(2), np.eye(2), np.zeros((2, 2)), np.eye(2))
    grid = build_grid(1.0, 64)
    tab = fundamental_matrix(prob, grid)
    for i, j in [(64, 0), (40, 10), (64, 50)]:
        dt = grid.nodes[i] - grid.nodes[j]
        ref = mittag_leffler(alpha, alpha, A * dt**alpha)
        np.testing.assert_allclose(tab(i, j), ref, rtol=5e-3, atol=1e-4)
