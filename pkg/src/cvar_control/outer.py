"""Bilevel driver: V(y) from the HJB solve, DV(y) from the gradient PDE, descent over y."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import SdeModel
from .hjb import ControlMesh, SolverGrid, ValueSolution, solve_hjb, value_at
from .linpde import solve_linear_pde, statistic_at_origin
from .risk import RiskSpec, SmoothedRiskSpec, UnboundedLipschitzError, suboptimality_constant

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DescentConfig:
    y0: tuple[float, ...] | None = None
    grad_tol: float = 1e-4
    max_iters: int = 200
    armijo_c: float = 1e-4
    initial_step: float | None = None  # None -> epsilon, the inverse semiconcavity constant
    convex_mode: bool = True
    min_step: float = 1e-14
    y0_paths: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not 0.0 < self.armijo_c < 1.0:
            raise ValueError("armijo_c must lie in (0, 1)")


@dataclass
class Evaluation:
    y: np.ndarray
    V: float
    DV: np.ndarray
    solution: ValueSolution = field(repr=False)

    def __iter__(self):
        return iter((self.V, self.DV))


@dataclass
class BilevelResult:
    y_star: np.ndarray
    V_star: float
    grad_norm: float
    iterations: int
    converged: bool
    bound_eps: float
    bound_eta: float
    global_flag: bool
    history: list[tuple[float, ...]] = field(default_factory=list, repr=False)
    solution: ValueSolution | None = field(default=None, repr=False)

    @property
    def bound(self) -> float:
        return self.bound_eps + self.bound_eta


def _terminal(smoothed: SmoothedRiskSpec, model: SdeModel, y):
    return lambda x: smoothed.f_eps(model.cost(x), y)


def _gradient_terminal(smoothed: SmoothedRiskSpec, model: SdeModel, y):
    return lambda x: smoothed.dyf_eps(model.cost(x), y)


def inner_value(y, smoothed: SmoothedRiskSpec, model: SdeModel, grid: SolverGrid,
                mesh: ControlMesh) -> tuple[float, ValueSolution]:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    sol = solve_hjb(model, _terminal(smoothed, model, y), grid, mesh)
    return value_at(sol, model.x0), sol


def gradient_from_solution(y, sol: ValueSolution, smoothed: SmoothedRiskSpec, model: SdeModel) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    w = solve_linear_pde(model, sol, _gradient_terminal(smoothed, model, y))
    return statistic_at_origin(w, model.x0)


def evaluate(y, smoothed: SmoothedRiskSpec, model: SdeModel, grid: SolverGrid,
             mesh: ControlMesh) -> Evaluation:
    """V(y) = v(0, x0) of the HJB solve and DV(y) = w(0, x0) of the gradient PDE."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    V, sol = inner_value(y, smoothed, model, grid, mesh)
    return Evaluation(y, V, gradient_from_solution(y, sol, smoothed, model), sol)


def default_y0(spec: RiskSpec, model: SdeModel, n_paths: int = 10_000, seed: int = 0) -> np.ndarray:
    """Per-term location estimate of the cost under the mid-box constant control."""
    from .mc import sample_var, simulate

    mid = 0.5 * (model.lower + model.upper)
    batch = simulate(model, mid, n_paths=n_paths, dt=model.T / 100, seed=seed)
    cost = model.cost(batch.terminal_values)
    y0 = np.empty(spec.m)
    for t in spec.terms:
        if t.kind == "cvar":
            y0[t.index] = sample_var(cost, t.alpha)
        elif t.kind == "mad":
            y0[t.index] = float(np.median(cost))
        else:
            y0[t.index] = float(np.mean(cost))
    return y0


def model_constant(spec: RiskSpec, model: SdeModel) -> float:
    """Constant C_model with |V_eta - V_eta'| <= C_model |eta - eta'|.

    Same control, two noise levels: E|X^eta_T - X^eta'_T|^2 <= (eta - eta')^2 T exp((2K + K^2) T)
    by Ito and Gronwall (K the x-Lipschitz constant of drift and diffusion), and
    f(g(.), y) is Lipschitz with constant L_x(f) * L(g).
    """
    lx = spec.lipschitz_x
    if not np.isfinite(lx) or not spec.bounded:
        raise UnboundedLipschitzError(f"{spec.kind} integrand is not Lipschitz")
    K = model.lipschitz_x
    return lx * model.cost.lipschitz * math.sqrt(model.T * math.exp((2.0 * K + K * K) * model.T))


def suboptimality_bound(spec: RiskSpec, model: SdeModel, eps: float, eta: float) -> float:
    """``C_f eps + C_model eta`` with ``C_f = L_y^2 / 2``."""
    if eps < 0 or eta < 0:
        raise ValueError("eps and eta must be nonnegative")
    c_f = suboptimality_constant(spec)
    c_m = model_constant(spec, model)
    return c_f * eps + c_m * eta


def minimize(config: DescentConfig, smoothed: SmoothedRiskSpec, model: SdeModel, grid: SolverGrid,
             mesh: ControlMesh) -> BilevelResult:
    """Gradient descent on V_eps with Armijo backtracking.

    Trial steps are halved until the Armijo test passes.  After an accepted
    step the next trial is the Barzilai-Borwein secant step ``s.s / s.dg`` (or
    twice the accepted step when the secant curvature is not positive), which
    avoids the period-two oscillation a pure doubling rule falls into.  In
    non-convex mode the same iteration is a proximal-supergradient descent and the
    result never claims global optimality.
    """
    spec = smoothed.base
    if config.y0 is None:
        y = default_y0(spec, model, config.y0_paths, config.seed)
    else:
        y = np.atleast_1d(np.asarray(config.y0, dtype=float))
    step = config.initial_step if config.initial_step is not None else smoothed.epsilon
    try:
        bound_eps = suboptimality_constant(spec) * smoothed.epsilon
        bound_eta = model_constant(spec, model) * model.eta
    except UnboundedLipschitzError:
        bound_eps = bound_eta = math.inf

    ev = evaluate(y, smoothed, model, grid, mesh)
    history = [(*ev.y, ev.V, float(np.linalg.norm(ev.DV)))]
    converged = False
    it = 0
    while True:
        g = ev.DV
        gn = float(np.linalg.norm(g))
        if gn <= config.grad_tol:
            converged = True
            break
        if it >= config.max_iters:
            break
        t = step
        while True:
            y_try = ev.y - t * g
            V_try, sol_try = inner_value(y_try, smoothed, model, grid, mesh)
            if V_try <= ev.V - config.armijo_c * t * gn * gn:
                break
            t *= 0.5
            if t < config.min_step:
                log.warning("line search stalled at y=%s (|DV|=%.3g)", ev.y, gn)
                return _result(ev, gn, it, False, bound_eps, bound_eta, config, history)
        it += 1
        DV_try = gradient_from_solution(y_try, sol_try, smoothed, model)
        s_vec = y_try - ev.y
        curv = float(s_vec @ (DV_try - g))
        ev = Evaluation(np.atleast_1d(y_try), V_try, DV_try, sol_try)
        history.append((*ev.y, ev.V, float(np.linalg.norm(ev.DV))))
        log.debug("iter %d: y=%s V=%.10g |DV|=%.3g step=%.3g", it, ev.y, ev.V, history[-1][-1], t)
        step = float(s_vec @ s_vec) / curv if curv > 0 else 2.0 * t
    return _result(ev, gn, it, converged, bound_eps, bound_eta, config, history)


def _result(ev: Evaluation, gn, it, converged, bound_eps, bound_eta, config, history) -> BilevelResult:
    return BilevelResult(ev.y.copy(), ev.V, gn, it, converged, bound_eps, bound_eta,
                         bool(config.convex_mode), history, ev.solution)
