import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cvar_control.dynamics import MarketParams, ModelError, SdeModel, perturb, portfolio_model
from cvar_control.hjb import ControlMesh, SolverGrid, solve_hjb, value_at
from cvar_control.outer import model_constant
from cvar_control.risk import inf_convolve, make_spec


@pytest.fixture(scope="module")
def model():
    return portfolio_model(MarketParams.single_asset(), T=1.0)


def test_portfolio_coefficients(model):
    a = lambda v: np.array([v])  # noqa: E731
    assert model.drift(0.3, a(1.0)) == pytest.approx(0.09)
    assert model.drift(-2.0, a(0.0)) == pytest.approx(0.01)
    assert model.diffusion(0.0, a(-6.0)) == pytest.approx(1.2)
    assert model.x0 == 0.0 and model.cost(0.25) == -0.25
    assert model.k == 1 and model.n == 1


def test_quadratic_metadata_matches_callables(model):
    q = model.quadratic
    for v in np.linspace(-6, 6, 13):
        assert q.drift(v) == pytest.approx(model.drift(0.0, np.array([v])))
        assert q.sigma2(v) == pytest.approx(model.diffusion(0.0, np.array([v])) ** 2)


def test_rejects_non_psd_sigma():
    with pytest.raises(ModelError):
        MarketParams(np.array([0.1, 0.1]), np.array([[0.04, 0.1], [0.1, 0.04]]), 0.01, -1.0, 1.0)
    with pytest.raises(ModelError):
        MarketParams(np.array([0.1, 0.1]), np.array([[0.04, 0.01], [0.0, 0.04]]), 0.01, -1.0, 1.0)


def test_model_validation():
    f = lambda x, a: 0.0 * x  # noqa: E731
    with pytest.raises(ModelError):
        SdeModel(f, f, [1.0], [0.0], 0.0, 1.0)
    with pytest.raises(ModelError):
        SdeModel(f, f, [0.0], [1.0], 0.0, 0.0)
    with pytest.raises(ModelError):
        SdeModel(f, f, [0.0], [1.0], 0.0, 1.0, eta=-0.1)


def test_perturb(model):
    assert perturb(model, 0.0) == model
    m = perturb(model, 0.05)
    assert np.sqrt(m.sigma2_eff(0.0, np.array([0.0]))) == pytest.approx(0.05)
    assert m.eta == 0.05 and model.eta == 0.0
    with pytest.raises(ModelError):
        perturb(model, -1e-3)


def test_parabolicity_flag(model):
    assert not model.is_uniformly_parabolic()  # a = 0 is in the box
    assert perturb(model, 0.01).is_uniformly_parabolic()
    narrow = portfolio_model(MarketParams.single_asset(lower=0.5, upper=2.0), T=1.0)
    assert narrow.is_uniformly_parabolic()


def test_perturbed_model_is_parabolic_on_grid_times_mesh(model):
    m = perturb(model, 0.02)
    g = SolverGrid.default(m, Nx=101)
    mesh = ControlMesh.box(m)
    s2 = m.sigma2_eff(g.nodes[:, None], mesh.points[None, :, :])
    assert np.all(s2 >= 0.02**2 - 1e-15)


def test_coefficients_x_lipschitz_spot_check(model):
    rng = np.random.default_rng(0)
    x1, x2 = rng.normal(size=(2, 100))
    a = rng.uniform(-6, 6, (100, 1))
    for fn, lip in ((model.drift, model.drift_lipschitz_x), (model.diffusion, model.diffusion_lipschitz_x)):
        assert np.all(np.abs(fn(x1, a) - fn(x2, a)) <= lip * np.abs(x1 - x2) + 1e-14)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-6, 6), b=st.floats(-6, 6))
def test_drift_concave_and_variance_convex_in_control(model, a, b):
    pa, pb, mid = np.array([a]), np.array([b]), np.array([0.5 * (a + b)])
    assert model.drift(0.0, mid) >= 0.5 * (model.drift(0.0, pa) + model.drift(0.0, pb)) - 1e-12
    s2 = lambda v: model.diffusion(0.0, v) ** 2  # noqa: E731
    assert s2(mid) <= 0.5 * (s2(pa) + s2(pb)) + 1e-12


def test_two_asset_model():
    Sigma = np.array([[0.04, 0.006], [0.006, 0.09]])
    p = MarketParams(np.array([0.11, 0.15]), Sigma, 0.01, -2.0, 2.0)
    m = portfolio_model(p, T=1.0)
    a = np.array([0.5, 0.3])
    assert m.k == 2 and m.quadratic is None
    assert m.drift(0.0, a) == pytest.approx(0.01 + a @ (p.mu - 0.01) - 0.5 * a @ Sigma @ a)
    assert m.diffusion(0.0, a) == pytest.approx(np.sqrt(a @ Sigma @ a))
    load = m.loading(0.0, a)
    assert load @ load == pytest.approx(a @ Sigma @ a)


def test_value_lipschitz_in_eta(model):
    spec = make_spec("mean_cvar", alpha=0.95, lam=1.0)
    sm = inf_convolve(spec, 0.05)
    c = model_constant(spec, model)
    vals = {}
    for eta in (0.02, 0.05, 0.1):
        m = perturb(model, eta)
        g = SolverGrid(-3.0, 3.0, 201)
        sol = solve_hjb(m, lambda x: sm.f_eps(m.cost(x), np.array([0.05])), g, ControlMesh.box(m))
        vals[eta] = value_at(sol, 0.0)
    for e1, e2 in itertools.combinations(vals, 2):
        assert abs(vals[e1] - vals[e2]) <= c * abs(e1 - e2)
