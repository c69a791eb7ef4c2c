"""Linear parabolic solves along a frozen feedback policy.

Uses the very same stencil, grid and time step as the HJB solve that produced the
policy, so a frozen-policy solve of the HJB terminal reproduces the HJB values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import SdeModel
from .hjb import (FeedbackPolicy, SolverError, SolverGrid, ValueSolution, apply_generator,
                  extrapolate_boundary, stencil_diffusion)


@dataclass(frozen=True)
class GradientSolution:
    grid: SolverGrid
    x0: float
    components: np.ndarray  # (m, Nt+1, Nx)

    @property
    def m(self) -> int:
        return self.components.shape[0]


def constant_policy(model: SdeModel, grid: SolverGrid, a, Nt: int | None = None) -> FeedbackPolicy:
    """Policy that applies the fixed control ``a`` everywhere."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    x = grid.nodes
    mu = np.asarray(model.drift(x, a[None, :])) * np.ones_like(x)
    s2 = np.asarray(model.sigma2_eff(x, a[None, :])) * np.ones_like(x)
    if Nt is None:
        Nt = grid.n_steps(float(np.abs(mu).max()), float(s2.max()), model.T)
    s_eff = stencil_diffusion(mu, s2, grid.dx)
    controls = np.broadcast_to(a, (Nt, grid.Nx, a.size))
    return FeedbackPolicy(grid, model.T, controls, np.broadcast_to(mu, (Nt, grid.Nx)),
                          np.broadcast_to(s_eff, (Nt, grid.Nx)))


def solve_linear_pde(model: SdeModel, policy: FeedbackPolicy | ValueSolution, terminal: Callable,
                     grid: SolverGrid | None = None) -> GradientSolution:
    """Solve ``w_t + 0.5 s w_xx + mu w_x = 0`` with coefficients frozen along ``policy``.

    ``terminal(x)`` may return shape (Nx,) or (Nx, m); each column is an
    independent scalar equation.
    """
    if isinstance(policy, ValueSolution):
        policy = policy.policy
    if grid is not None and grid != policy.grid:
        raise SolverError("grid does not match the grid the policy was computed on")
    grid = policy.grid
    x = grid.nodes
    dx = grid.dx
    dt = policy.dt
    w = np.asarray(terminal(x), dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    if w.shape[0] != grid.Nx:
        raise SolverError(f"terminal returned {w.shape[0]} rows for {grid.Nx} nodes")
    w = np.ascontiguousarray(w.T)  # (m, Nx)
    out = np.empty((w.shape[0], policy.Nt + 1, grid.Nx))
    out[:, -1] = w
    for n in range(policy.Nt - 1, -1, -1):
        mu = policy.drift[n, 1:-1]
        s = policy.stencil_diffusion[n, 1:-1]
        w_new = np.empty_like(w)
        for c in range(w.shape[0]):
            w_new[c, 1:-1] = w[c, 1:-1] + dt * apply_generator(w[c], mu, s, dx)
            extrapolate_boundary(w_new[c])
        w = w_new
        out[:, n] = w
    return GradientSolution(grid, model.x0, out)


def statistic_at_origin(sol: GradientSolution, x0: float | None = None) -> np.ndarray:
    """Initial-time components interpolated at the start state, shape (m,)."""
    x0 = sol.x0 if x0 is None else x0
    if not sol.grid.contains(x0):
        raise SolverError(f"x0={x0} outside grid")
    nodes = sol.grid.nodes
    return np.array([np.interp(x0, nodes, comp[0]) for comp in sol.components])
