import numpy as np
import pytest

from conftest import benchmark_value
from flqr import DomainError, InvalidArgument, Tables, build_grid, direct_optimum, evaluate, fd_ci_check, strategy_U
from flqr.suites import benchmark_problem, random_problem, random_state


@pytest.mark.parametrize("alpha", [0.7, 0.9])
def test_direct_optimum_approaches_closed_form(alpha):
    prob = benchmark_problem(alpha)
    rep = direct_optimum(prob, prob.position([1.0]), build_grid(1.0, 128))
    assert rep.rho_hat == pytest.approx(benchmark_value(alpha), rel=5e-3)
    assert rep.asymmetry <= 1e-12 and rep.min_eigenvalue > 0
    assert rep.value_gap is None


def test_direct_optimum_converges_slowly_for_small_order():
    # cell-constant controls resolve (T - s)^(alpha - 1) only at rate N^(-2(2 alpha - 1))
    prob = benchmark_problem(0.6)
    gaps = [direct_optimum(prob, prob.position([1.0]), build_grid(1.0, N)).rho_hat - benchmark_value(0.6) for N in (64, 128, 256)]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert gaps[2] / gaps[1] == pytest.approx(2**-0.4, rel=0.1)


def test_direct_optimum_matches_value_on_random_problem(rand_prob):
    grid = build_grid(1.0, 64)
    tab = Tables(rand_prob, grid)
    t = grid.nodes[10]
    pos = rand_prob.position(random_state(0, rand_prob.n), t=t, f=random_state(1, rand_prob.n))
    phi = float(evaluate(rand_prob, pos, tab, derivatives=False).phi)
    rep = direct_optimum(rand_prob, pos, grid, phi)
    assert rep.value_gap == pytest.approx(rep.rho_hat - phi)
    assert abs(rep.value_gap) <= 0.02 * max(abs(phi), 1e-12)
    # the first optimal control value is close to the feedback value
    u0 = strategy_U(rand_prob, pos, tab)
    np.testing.assert_allclose(rep.u_hat.values[0], u0, rtol=0.1, atol=0.05 * (1 + np.abs(u0).max()))


def test_direct_optimum_needs_t_before_T():
    prob = benchmark_problem()
    with pytest.raises(DomainError):
        direct_optimum(prob, prob.position([1.0], t=1.0), build_grid(1.0, 8))


def test_fd_ci_check_remainders_shrink():
    prob = benchmark_problem(0.7)
    pos = prob.position([1.0])
    deltas = 2.0 ** -np.arange(3, 8) / 2
    chk = fd_ci_check(prob, pos, [0.5], deltas, build_grid(1.0, 128))
    r = np.abs(chk.ratio)
    assert np.all(np.diff(r) < 0)
    assert chk.phi == pytest.approx(benchmark_value(0.7), rel=1e-12)


def test_fd_ci_check_rejects_bad_steps():
    prob = benchmark_problem()
    pos = prob.position([1.0])
    grid = build_grid(1.0, 8)
    with pytest.raises(InvalidArgument):
        fd_ci_check(prob, pos, [0.0], [0.1, -0.1], grid)
    with pytest.raises(InvalidArgument):
        fd_ci_check(prob, pos, [0.0], [1.5], grid)
    with pytest.raises(DomainError):
        fd_ci_check(prob, prob.position([1.0], t=1.0), [0.0], [0.1], grid)
