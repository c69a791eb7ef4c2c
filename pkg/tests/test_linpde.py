import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvar_control.dynamics import MarketParams, perturb, portfolio_model
from cvar_control.hjb import ControlMesh, SolverError, SolverGrid, solve_hjb, value_at
from cvar_control.linpde import constant_policy, solve_linear_pde, statistic_at_origin
from cvar_control.mc import estimate_objective_and_gradient, simulate
from cvar_control.risk import inf_convolve, make_spec


@pytest.fixture(scope="module")
def bench():
    m = perturb(portfolio_model(MarketParams.single_asset(), T=1.0), 0.01)
    sm = inf_convolve(make_spec("mean_cvar", alpha=0.95, lam=1.0), 0.01)
    g = SolverGrid.default(m, Nx=300)
    sol = solve_hjb(m, lambda x: sm.f_eps(m.cost(x), np.array([0.02])), g, ControlMesh.box(m))
    return m, sm, g, sol


def test_constant_terminal(bench):
    m, _, g, sol = bench
    w = solve_linear_pde(m, sol, lambda x: np.full((x.size, 2), [1.5, -0.25]))
    assert w.m == 2
    np.testing.assert_allclose(w.components[0], 1.5, atol=1e-12)
    np.testing.assert_allclose(statistic_at_origin(w), [1.5, -0.25], atol=1e-12)


def test_expected_log_return_under_constant_leverage():
    m = perturb(portfolio_model(MarketParams.single_asset(), T=1.0), 0.01)
    g = SolverGrid.default(m, Nx=400)
    w = solve_linear_pde(m, constant_policy(m, g, [1.0]), lambda x: x)
    assert statistic_at_origin(w)[0] == pytest.approx(0.09, abs=1e-3)


def test_terminal_rows_exact(bench):
    m, sm, g, sol = bench
    y = np.array([0.02])
    w = solve_linear_pde(m, sol, lambda x: sm.dyf_eps(m.cost(x), y))
    np.testing.assert_array_equal(w.components[0][-1], sm.dyf_eps(m.cost(g.nodes), y)[:, 0])


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), k=st.floats(-1, 1))
def test_linearity(bench, a, b, k):
    m, sm, g, sol = bench
    h1 = lambda x: sm.f_eps(m.cost(x), np.array([k]))  # noqa: E731
    h2 = lambda x: np.sin(3 * x)  # noqa: E731
    w1 = solve_linear_pde(m, sol, h1).components[0]
    w2 = solve_linear_pde(m, sol, h2).components[0]
    w = solve_linear_pde(m, sol, lambda x: a * h1(x) + b * h2(x)).components[0]
    assert np.max(np.abs(w - (a * w1 + b * w2))) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(c=st.floats(0, 1), wt=st.floats(0, 2), k=st.floats(-1.5, 1.5))
def test_comparison(bench, c, wt, k):
    m, _, g, sol = bench
    h1 = lambda x: np.cos(x)  # noqa: E731
    w1 = solve_linear_pde(m, sol, h1).components[0]
    w2 = solve_linear_pde(m, sol, lambda x: h1(x) + c + wt * np.maximum(x - k, 0.0)).components[0]
    assert np.all(w1 <= w2 + 1e-12)


def test_value_and_gradient_match_monte_carlo_under_optimal_policy():
    # eps = 0.05 keeps the loss distribution's pile-up at the kink resolved on the grid
    m = perturb(portfolio_model(MarketParams.single_asset(), T=1.0), 0.01)
    sm = inf_convolve(make_spec("mean_cvar", alpha=0.95, lam=1.0), 0.05)
    y = np.array([0.02])
    g = SolverGrid.default(m, Nx=800)
    sol = solve_hjb(m, lambda x: sm.f_eps(m.cost(x), y), g, ControlMesh.box(m))
    DV = statistic_at_origin(solve_linear_pde(m, sol, lambda x: sm.dyf_eps(m.cost(x), y)))
    est = estimate_objective_and_gradient(simulate(m, sol, n_paths=100_000, seed=3), sm, y)
    assert abs(DV[0] - est.grad[0]) <= 3 * est.grad_stderr[0]
    assert abs(value_at(sol, 0.0) - est.mean) <= 3 * est.stderr


def test_grid_mismatch(bench):
    m, _, _, sol = bench
    with pytest.raises(SolverError, match="grid"):
        solve_linear_pde(m, sol, lambda x: x, grid=SolverGrid(-1.0, 1.0, 51))


def test_terminal_shape_checked(bench):
    m, _, _, sol = bench
    with pytest.raises(SolverError):
        solve_linear_pde(m, sol, lambda x: x[:-1])


def test_statistic_outside_grid(bench):
    m, _, g, sol = bench
    w = solve_linear_pde(m, sol, lambda x: x)
    with pytest.raises(SolverError):
        statistic_at_origin(w, g.x_max + 1.0)
