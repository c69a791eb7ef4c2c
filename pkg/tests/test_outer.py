import numpy as np
import pytest
from scipy import integrate, optimize, stats

from cvar_control.dynamics import MarketParams, perturb, portfolio_model
from cvar_control.hjb import ControlMesh, SolverGrid
from cvar_control.outer import (DescentConfig, evaluate, inner_value, minimize, model_constant, suboptimality_bound)
from cvar_control.risk import UnboundedLipschitzError, inf_convolve, make_spec, suboptimality_constant

# independent quadrature oracle: pure CVaR 0.95, X_T ~ N(0.09, 0.2^2 + 0.01^2) (a = 1, eta = 0.01)
ORACLE_Y_STAR = {0.01: 0.16282064628497603, 0.005: 0.19778848784192035, 0.0025: 0.21773632721568922}
ORACLE_V_STAR = {0.01: 0.24465598430826083, 0.005: 0.2798128556438017, 0.0025: 0.3003785703393095}
ORACLE_V_0239 = 0.2682057428924138
ORACLE_V_02, ORACLE_DV_02 = 0.2508688608369113, 0.31786212866689806
VAR_095 = -0.09 + 0.2 * stats.norm.ppf(0.95)


@pytest.fixture(scope="module")
def market():
    return portfolio_model(MarketParams.single_asset(), T=1.0)


@pytest.fixture(scope="module")
def single(market):
    m = perturb(market, 0.01)
    return m, SolverGrid(-1.5, 1.5, 301), ControlMesh.constant([1.0])


@pytest.fixture(scope="module")
def box(market):
    m = perturb(market, 0.01)
    sm = inf_convolve(make_spec("mean_cvar", alpha=0.95, lam=1.0), 0.01)
    return m, sm, SolverGrid.default(m, Nx=201), ControlMesh.box(m)


def cvar_eps(eps):
    return inf_convolve(make_spec("pure_cvar", alpha=0.95), eps)


def test_evaluate_at_var_matches_quadrature(single):
    m, g, mesh = single
    V, DV = evaluate(0.239, cvar_eps(0.01), m, g, mesh)
    assert V == pytest.approx(ORACLE_V_0239, rel=0.01)
    # sandwich against the unsmoothed objective, whose value at the VaR is the normal CVaR
    cvar = -0.09 + np.sqrt(0.04 + 1e-4) * stats.norm.pdf(stats.norm.ppf(0.95)) / 0.05
    assert V <= cvar <= V + suboptimality_constant(make_spec("pure_cvar", alpha=0.95)) * 0.01


def test_evaluate_far_above_tail(single):
    m, g, mesh = single
    V, DV = evaluate(10.0, cvar_eps(0.01), m, g, mesh)
    # upper branch of the smoothed CVaR integrand is y - eps/2
    assert V == pytest.approx(9.995, abs=1e-3)
    assert DV[0] == pytest.approx(1.0, abs=1e-9)


def test_gradient_matches_finite_differences(single):
    m, g, mesh = single
    sm = cvar_eps(0.01)
    h = 1e-3
    V, DV = evaluate(0.2, sm, m, g, mesh)
    fd = (evaluate(0.2 + h, sm, m, g, mesh).V - evaluate(0.2 - h, sm, m, g, mesh).V) / (2 * h)
    assert DV[0] == pytest.approx(fd, rel=0.02)
    assert V == pytest.approx(ORACLE_V_02, rel=1e-3)
    assert DV[0] == pytest.approx(ORACLE_DV_02, rel=0.01)


@pytest.mark.parametrize("eps", sorted(ORACLE_Y_STAR))
def test_minimize_singleton_matches_quadrature(single, eps):
    m, g, mesh = single
    cfg = DescentConfig(y0=(0.1,), grad_tol=1e-5)
    r = minimize(cfg, cvar_eps(eps), m, g, mesh)
    assert r.converged and r.grad_norm <= cfg.grad_tol
    assert r.y_star[0] == pytest.approx(ORACLE_Y_STAR[eps], abs=2e-3)
    assert r.V_star == pytest.approx(ORACLE_V_STAR[eps], abs=1e-4)


def test_smoothed_minimiser_approaches_var(single):
    m, g, mesh = single
    ys = [minimize(DescentConfig(y0=(0.1,)), cvar_eps(e), m, g, mesh).y_star[0] for e in (0.01, 0.005, 0.0025)]
    gaps = [VAR_095 - y for y in ys]
    assert all(0 < b < a for a, b in zip(gaps, gaps[1:]))
    # the offset is linear in eps
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.15)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.15)


def best_singleton_value(sm, eta):
    """min over constant leverage a and y of E f_eps(-X, y), X normal, by quadrature."""
    z = np.linspace(-12.0, 12.0, 6001)
    w = stats.norm.pdf(z)
    w /= integrate.trapezoid(w, z)

    def value(a, y):
        x = 0.01 + 0.1 * a - 0.02 * a * a + np.sqrt(0.04 * a * a + eta * eta) * z
        return integrate.trapezoid(sm.f_eps(-x, np.full((x.size, 1), y)) * w, z)

    best = np.inf
    for a in np.linspace(-6, 6, 241):
        r = optimize.minimize_scalar(lambda y: value(a, y), bounds=(-1.0, 2.0), method="bounded",
                                     options={"xatol": 1e-7})
        best = min(best, r.fun)
    return best


def test_full_box_beats_every_constant_leverage(box):
    m, sm, _, mesh = box
    r = minimize(DescentConfig(), sm, m, SolverGrid(-3.0, 3.0, 301), mesh)
    assert r.converged
    # about -0.028 against -0.0222
    assert r.V_star < best_singleton_value(sm, 0.01) - 0.003


def test_descent_values_strictly_decrease(box):
    m, sm, g, mesh = box
    r = minimize(DescentConfig(y0=(0.4,)), sm, m, g, mesh)
    V = [h[-2] for h in r.history]
    assert len(V) >= 3
    assert all(b < a for a, b in zip(V, V[1:]))
    assert r.iterations == len(V) - 1


def test_result_bounds_and_flags(box, market):
    m, sm, g, mesh = box
    spec = sm.base
    r = minimize(DescentConfig(convex_mode=False), sm, m, g, mesh)
    assert r.bound_eps == pytest.approx(suboptimality_constant(spec) * 0.01)
    assert r.bound_eta == pytest.approx(model_constant(spec, m) * 0.01)
    assert r.bound == pytest.approx(suboptimality_bound(spec, m, 0.01, 0.01))
    assert not r.global_flag
    assert minimize(DescentConfig(max_iters=0, y0=(0.4,)), sm, m, g, mesh).converged is False


def test_suboptimality_bound_examples(market):
    spec = make_spec("pure_cvar", alpha=0.95)
    assert suboptimality_bound(spec, market, 0.01, 0.0) == pytest.approx(1.805)
    assert suboptimality_bound(spec, market, 0.0, 0.0) == 0.0
    b = [suboptimality_bound(spec, market, e, e) for e in (0.08, 0.04, 0.02)]
    assert b[0] > b[1] > b[2] > 0
    with pytest.raises(UnboundedLipschitzError):
        suboptimality_bound(make_spec("variance"), market, 0.01, 0.01)
    with pytest.raises(ValueError):
        suboptimality_bound(spec, market, -0.01, 0.0)


def test_bound_monotone_in_lipschitz_inputs(market):
    # larger lambda raises both Lipschitz constants of the mean-CVaR integrand; longer horizon raises C_model
    lams = [0.1, 0.5, 1.0, 2.0]
    b = [suboptimality_bound(make_spec("mean_cvar", alpha=0.95, lam=lam), market, 0.01, 0.01) for lam in lams]
    assert all(x < y for x, y in zip(b, b[1:]))
    spec = make_spec("mean_cvar", alpha=0.95, lam=1.0)
    c = [model_constant(spec, portfolio_model(MarketParams.single_asset(), T=T)) for T in (0.5, 1.0, 2.0)]
    assert all(x < y for x, y in zip(c, c[1:]))


def test_midpoint_convexity(box):
    m, sm, _, mesh = box
    # convexity in y is a property of the resolved problem; dx = 0.02 resolves the smoothed kink
    g = SolverGrid(-3.0, 3.0, 301)
    rng = np.random.default_rng(17)
    # random pairs on a lattice with even index gap, so midpoints are lattice points and solves are shared
    lattice = np.linspace(-0.3, 0.5, 41)
    cache = {}

    def V(i):
        if i not in cache:
            cache[i] = inner_value(lattice[i], sm, m, g, mesh)[0]
        return cache[i]

    worst = -np.inf
    for _ in range(50):
        i = rng.integers(0, 41)
        j = rng.choice([k for k in range(41) if (k - i) % 2 == 0 and k != i])
        worst = max(worst, V((i + j) // 2) - 0.5 * (V(i) + V(j)))
    assert worst <= 1e-6


def test_semiconcavity(box):
    m, sm, g, mesh = box
    rng = np.random.default_rng(23)
    for _ in range(15):
        y = rng.uniform(-0.3, 0.5)
        xi = rng.uniform(-0.2, 0.2)
        V0, DV0 = evaluate(y, sm, m, g, mesh)
        V1 = evaluate(y + xi, sm, m, g, mesh).V
        assert V1 <= V0 + xi * DV0[0] + xi * xi / (2 * sm.epsilon) + 1e-6


def test_descent_config_validation():
    with pytest.raises(ValueError):
        DescentConfig(grad_tol=0.0)
    with pytest.raises(ValueError):
        DescentConfig(armijo_c=1.0)
