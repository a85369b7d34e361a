import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flqr import (
    InvalidArgument,
    MatrixPath,
    OutOfRange,
    PiecewiseLinear,
    Position,
    Problem,
    ValidationError,
    build_grid,
    eval_history,
    extend_tail,
    frac_integral,
    position_distance,
)
from flqr.fracspace import check_order

# 1 / Gamma(2.7), mpmath at 30 digits
INV_GAMMA_2_7 = 0.64738082677862689


@pytest.mark.parametrize("alpha", [0.5, 1.0, 0.3, 1.2])
def test_check_order_rejects_outside_open_interval(alpha):
    with pytest.raises(InvalidArgument):
        check_order(alpha)


def test_build_grid_endpoints_and_grading():
    grid = build_grid(2.0, 16, 2.0)
    assert grid.nodes[0] == 0.0 and grid.nodes[-1] == 2.0
    assert grid.N == 16
    h = grid.steps
    assert np.all(np.diff(h) < 0)  # clustered towards T
    uniform = build_grid(1.0, 8, 1.0)
    np.testing.assert_allclose(uniform.steps, 1 / 8)


@pytest.mark.parametrize("args", [(0.0, 8), (1.0, 1), (1.0, 8, 0.5), (1.0, 2.5)])
def test_build_grid_rejects_bad_arguments(args):
    with pytest.raises(InvalidArgument):
        build_grid(*args)


def test_with_nodes_contains_requested_times():
    grid = build_grid(1.0, 16)
    times = [0.1, 0.33, 0.999]
    g2 = grid.with_nodes(times)
    for t in times:
        assert g2.has_node(t)
        assert g2.nodes[g2.index(t)] == t
    assert g2.nodes[0] == 0.0 and g2.nodes[-1] == 1.0
    assert np.all(np.diff(g2.nodes) > 0)


def test_grid_index_rejects_non_nodes():
    with pytest.raises(InvalidArgument):
        build_grid(1.0, 4, 1.0).index(0.3)


def test_piecewise_linear_evaluation_and_truncation():
    f = PiecewiseLinear([0.0, 1.0, 2.0], [0.0, 5.0], [1.0, 7.0])
    assert f(0.5) == pytest.approx(0.5)
    assert f(1.0) == pytest.approx(5.0)  # right-continuous at the jump
    assert f(2.0) == pytest.approx(7.0)
    g = f.truncate(1.5)
    assert g.end == 1.5 and g(1.5) == pytest.approx(6.0)
    assert f.truncate(1.0).knots.tolist() == [0.0, 1.0]
    with pytest.raises(OutOfRange):
        f.truncate(3.0)


def test_piecewise_linear_concat_requires_shared_endpoint():
    a = PiecewiseLinear.constant([0.0, 1.0], 1.0)
    b = PiecewiseLinear.constant([1.0, 2.0], 2.0)
    assert a.concat(b)(1.5) == pytest.approx(2.0)
    with pytest.raises(InvalidArgument):
        a.concat(PiecewiseLinear.constant([1.5, 2.0], 2.0))


@pytest.mark.parametrize("alpha", [0.6, 0.75, 0.95])
def test_frac_integral_of_constant(alpha):
    f = PiecewiseLinear.constant(np.linspace(0, 1, 5), 2.0)
    taus = np.array([0.3, 0.5, 1.0, 1.4])
    got = frac_integral(f, alpha, taus)
    # past the sample span only [0, 1] contributes
    expected = 2.0 * (taus**alpha - np.maximum(taus - 1.0, 0.0) ** alpha) / math.gamma(alpha + 1)
    np.testing.assert_allclose(got, expected, rtol=1e-13)


def test_frac_integral_of_identity_is_exact():
    f = PiecewiseLinear.from_nodes(np.linspace(0, 1, 4), np.linspace(0, 1, 4))
    assert frac_integral(f, 0.7, 1.0) == pytest.approx(INV_GAMMA_2_7, rel=1e-13)


def test_position_validation():
    with pytest.raises(InvalidArgument):
        Position(0.7, 1.0, np.zeros(1), PiecewiseLinear.constant([0.0, 0.5], [0.0]))
    with pytest.raises(InvalidArgument):
        Position(0.7, 1.0, np.zeros(2), PiecewiseLinear.constant([0.0, 1.0], [0.0]))


def test_eval_history_and_tail():
    pos = Position.constant_derivative(0.7, 0.5, [1.0], [2.0])
    assert eval_history(pos, 0.0)[0] == 1.0
    w_t = eval_history(pos, 0.5)[0]
    assert w_t == pytest.approx(1 + 2 * 0.5**0.7 / math.gamma(1.7), rel=1e-13)
    tail = extend_tail(pos, np.array([0.5, 0.8]), check=True)
    expected = 1 + 2 * (0.8**0.7 - 0.3**0.7) / math.gamma(1.7)
    assert tail[1, 0] == pytest.approx(expected, rel=1e-13)
    with pytest.raises(OutOfRange):
        eval_history(pos, 0.6)


def test_extend_tail_of_initial_position_is_constant():
    pos = Position.initial(0.7, [1.0, -2.0])
    np.testing.assert_array_equal(extend_tail(pos, [0.2, 0.9]), [[1.0, -2.0], [1.0, -2.0]])


_vec = st.lists(st.floats(-5, 5), min_size=2, max_size=2)


@settings(max_examples=30, deadline=None)
@given(_vec, _vec, _vec, _vec, _vec, _vec, st.floats(0.1, 1.0), st.floats(0.1, 1.0), st.floats(0.1, 1.0))
def test_position_distance_is_a_metric(a0, af, b0, bf, c0, cf, ta, tb, tc):
    pa = Position.constant_derivative(0.7, ta, a0, af)
    pb = Position.constant_derivative(0.7, tb, b0, bf)
    pc = Position.constant_derivative(0.7, tc, c0, cf)
    nodes = np.linspace(0, 1, 101)
    dab = position_distance(pa, pb, nodes)
    assert position_distance(pa, pa, nodes) == 0.0
    assert dab == pytest.approx(position_distance(pb, pa, nodes), rel=1e-12)
    assert dab >= 0
    dac = position_distance(pa, pc, nodes)
    dcb = position_distance(pc, pb, nodes)
    assert dab <= dac + dcb + 1e-9


def test_matrix_path_kinds():
    const = MatrixPath.constant([[1.0, 2.0]])
    assert const(np.array([0.0, 1.0])).shape == (2, 1, 2)
    poly = MatrixPath.polynomial([[[1.0]], [[2.0]], [[3.0]]])
    assert poly(2.0)[0, 0] == pytest.approx(1 + 4 + 12)
    samp = MatrixPath.samples([0.0, 1.0], [[[0.0]], [[2.0]]])
    np.testing.assert_allclose(samp(np.array([-1.0, 0.25, 2.0]))[:, 0, 0], [0.0, 0.5, 2.0])
    with pytest.raises(InvalidArgument):
        MatrixPath("spline", [[1.0]])


def _prob(**kw):
    data = dict(A=[[0.0]], B=[[1.0]], P=[[1.0]], Q=[[0.0]], R=[[1.0]])
    data.update(kw)
    return Problem(0.7, 1.0, **data)


def test_problem_validation_messages():
    with pytest.raises(ValidationError, match="not symmetric"):
        Problem(0.7, 1.0, np.eye(2), np.eye(2), [[1.0, 0.5], [0.0, 1.0]], np.zeros((2, 2)), np.eye(2))
    with pytest.raises(ValidationError, match="positive semi-definite"):
        _prob(Q=[[-1.0]])
    with pytest.raises(ValidationError, match="R not θ-coercive"):
        _prob(R=[[0.0]])
    with pytest.raises(ValidationError, match="R not θ-coercive"):
        Problem(0.7, 1.0, [[0.0]], [[1.0]], [[1.0]], [[0.0]], [[1.0]], theta=2.0)
    with pytest.raises(ValidationError, match="shape"):
        _prob(B=[[1.0, 0.0]], R=[[1.0]])
    with pytest.raises(InvalidArgument):
        Problem(0.4, 1.0, [[0.0]], [[1.0]], [[1.0]], [[0.0]], [[1.0]])


def test_problem_checks_time_varying_coercivity():
    # R(tau) = 1 - 2 tau loses definiteness at tau = 1/2
    with pytest.raises(ValidationError, match="θ-coercive"):
        _prob(R=MatrixPath.polynomial([[[1.0]], [[-2.0]]]))


def test_problem_position_helper():
    prob = _prob()
    pos = prob.position([2.0], t=0.4, f=[1.0])
    assert pos.t == 0.4 and pos.f(0.2)[0] == 1.0
    with pytest.raises(InvalidArgument):
        prob.position([1.0, 2.0])
