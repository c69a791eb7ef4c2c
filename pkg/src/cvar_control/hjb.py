"""Explicit monotone finite differences for the inner control problem.

Backward step at interior node i, for control candidate a:

    v_i^n = v_i^{n+1} + dt * min_a [ 0.5 * s_eff(a) * D2 v + mu(a) * D0 v ]

with centred differences D2, D0 and the stencil diffusion
``s_eff = max(sigma^2 + eta^2, |mu| dx)``.  Where the drift dominates, this is
exactly the upwind first difference (``0.5 |mu| dx D2 + mu D0 = mu D_upwind``);
elsewhere it is the second-order centred scheme.  Every neighbour weight is then
nonnegative, which with the time-step bound below makes the scheme monotone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import QuadraticCoefficients, SdeModel


class SolverError(RuntimeError):
    pass


class ParabolicityError(SolverError):
    pass


@dataclass(frozen=True)
class SolverGrid:
    x_min: float
    x_max: float
    Nx: int
    Nt: int | None = None
    nt_cap: int = 200_000
    boundary: str = "second_derivative_zero"

    def __post_init__(self):
        if self.Nx < 3:
            raise SolverError("Nx must be at least 3")
        if not self.x_min < self.x_max:
            raise SolverError("x_min must be below x_max")
        if self.boundary != "second_derivative_zero":
            raise SolverError(f"unsupported boundary {self.boundary!r}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.Nx - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.Nx)

    def contains(self, x: float) -> bool:
        return self.x_min <= x <= self.x_max

    @classmethod
    def default(cls, model: SdeModel, Nx: int = 400, sigmas: float = 6.0, **kw) -> "SolverGrid":
        """Truncate to x0 +- (sigmas * sigma_max * sqrt(T) + max|mu| * T)."""
        mu_max, s2_max, _ = model.coefficient_bounds()
        half = sigmas * math.sqrt(s2_max * model.T) + mu_max * model.T
        if half <= 0:
            half = 1.0
        return cls(model.x0 - half, model.x0 + half, Nx, **kw)

    def n_steps(self, mu_max: float, s2_max: float, T: float) -> int:
        dx = self.dx
        denom = s2_max + dx * mu_max
        nt_cfl = 1 if denom <= 0 else math.ceil(T * denom / dx**2)
        nt = max(nt_cfl, self.Nt or 1)
        if nt > self.nt_cap:
            raise SolverError(
                f"monotonicity bound needs {nt} time steps (cap {self.nt_cap}); use a coarser dx"
            )
        return nt


@dataclass(frozen=True)
class ControlMesh:
    """Control candidates, pre-sorted so that argmin ties favour small |a|.

    With ``analytic=True`` (single-asset quadratic models only) the solver also
    evaluates the exact minimisers of the piecewise-quadratic discrete
    Hamiltonian, so the minimum is taken over the whole control interval.
    """

    points: np.ndarray
    analytic: bool = False

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        order = np.lexsort((np.arange(len(pts)), np.linalg.norm(pts, axis=1)))
        object.__setattr__(self, "points", pts[order])

    @property
    def Na(self) -> int:
        return len(self.points)

    @property
    def k(self) -> int:
        return self.points.shape[1]

    @classmethod
    def box(cls, model: SdeModel, per_axis: int = 25, analytic: bool = True) -> "ControlMesh":
        pts = model.box_samples(per_axis)
        return cls(pts, analytic and model.quadratic is not None)

    @classmethod
    def constant(cls, a) -> "ControlMesh":
        return cls(np.atleast_2d(np.asarray(a, dtype=float)), False)


@dataclass(frozen=True)
class FeedbackPolicy:
    """Frozen controls per (time level, node) with the stencil coefficients they induce.

    Level n holds the control applied on [t_n, t_{n+1}).
    """

    grid: SolverGrid
    T: float
    controls: np.ndarray  # (Nt, Nx, k)
    drift: np.ndarray  # (Nt, Nx)
    stencil_diffusion: np.ndarray  # (Nt, Nx), already max(s, |mu| dx)

    @property
    def Nt(self) -> int:
        return self.controls.shape[0]

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    def level_index(self, t):
        return np.clip(np.rint(np.asarray(t) / self.dt).astype(int), 0, self.Nt - 1)

    def node_index(self, x):
        g = self.grid
        return np.clip(np.rint((np.asarray(x) - g.x_min) / g.dx).astype(int), 0, g.Nx - 1)

    def control_at(self, t, x) -> np.ndarray:
        """Nearest-node lookup; always a control actually chosen by the solver."""
        return self.controls[self.level_index(t), self.node_index(x)]


@dataclass(frozen=True)
class ValueSolution:
    grid: SolverGrid
    values: np.ndarray  # (Nt+1, Nx); row n is t_n = n dt
    policy: FeedbackPolicy

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.policy.T, self.values.shape[0])

    @property
    def controls(self) -> np.ndarray:
        return self.policy.controls


def stencil_diffusion(mu, s2, dx):
    return np.maximum(s2, np.abs(mu) * dx)


def apply_generator(v: np.ndarray, mu, s_eff, dx: float) -> np.ndarray:
    """``0.5 s_eff D2 v + mu D0 v`` at interior nodes (broadcast over leading axes)."""
    d2 = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / (dx * dx)
    d0 = (v[2:] - v[:-2]) / (2.0 * dx)
    return 0.5 * s_eff * d2 + mu * d0


def extrapolate_boundary(v: np.ndarray) -> None:
    v[0] = 2.0 * v[1] - v[2]
    v[-1] = 2.0 * v[-2] - v[-3]


def _roots_in(c2: float, c1: float, c0: float, lo: float, hi: float) -> list[float]:
    if abs(c2) < 1e-300:
        roots = [] if c1 == 0 else [-c0 / c1]
    else:
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc < 0:
            return []
        sq = math.sqrt(disc)
        roots = [(-c1 - sq) / (2.0 * c2), (-c1 + sq) / (2.0 * c2)]
    return [r for r in roots if lo <= r <= hi]


def _analytic_breakpoints(q: QuadraticCoefficients, eta: float, dx: float, lo: float, hi: float) -> np.ndarray:
    """Control values where the stencil switches between centred and upwind form."""
    pts = [lo, hi]
    s0 = q.s0 + eta * eta
    for sign in (1.0, -1.0):
        pts += _roots_in(q.s2 - sign * q.d2 * dx, q.s1 - sign * q.d1 * dx, s0 - sign * q.d0 * dx, lo, hi)
    pts += _roots_in(q.d2, q.d1, q.d0, lo, hi)
    return np.unique(np.array(pts))


def _node_candidates(q: QuadraticCoefficients, v_next: np.ndarray, dx: float, lo: float, hi: float) -> np.ndarray:
    """Per-node stationary points of the three quadratic forms, clipped; shape (3, Nx-2)."""
    d2 = (v_next[2:] - 2.0 * v_next[1:-1] + v_next[:-2]) / (dx * dx)
    d0 = (v_next[2:] - v_next[:-2]) / (2.0 * dx)
    dp = (v_next[2:] - v_next[1:-1]) / dx
    dm = (v_next[1:-1] - v_next[:-2]) / dx
    out = []
    for c2, c1 in (
        (0.5 * q.s2 * d2 + q.d2 * d0, 0.5 * q.s1 * d2 + q.d1 * d0),
        (q.d2 * dp, q.d1 * dp),
        (q.d2 * dm, q.d1 * dm),
    ):
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(c2 > 0, -c1 / (2.0 * c2), lo)
        out.append(np.clip(a, lo, hi))
    return np.stack(out)


def _check_parabolic(model: SdeModel, mesh: ControlMesh, x: np.ndarray) -> None:
    if mesh.analytic:
        ok = model.is_uniformly_parabolic()
    else:
        s2 = model.sigma2_eff(x[None, :], mesh.points[:, None, :])
        ok = float(np.min(s2)) > 0.0
    if not ok:
        raise ParabolicityError(
            "diffusion degenerates on the control set; add extra noise with dynamics.perturb(model, eta)"
        )


def solve_hjb(model: SdeModel, terminal: Callable, grid: SolverGrid, mesh: ControlMesh) -> ValueSolution:
    """March the HJB equation backward from ``v(T, x) = terminal(x)``."""
    if mesh.k != model.k:
        raise SolverError(f"mesh control dimension {mesh.k} != model dimension {model.k}")
    x = grid.nodes
    xi = x[1:-1]
    dx = grid.dx
    _check_parabolic(model, mesh, x)

    mesh_pts = mesh.points
    analytic = mesh.analytic and model.quadratic is not None and model.k == 1
    lo, hi = float(model.lower[0]), float(model.upper[0])
    if analytic:
        q = model.quadratic
        extra = _analytic_breakpoints(q, model.eta, dx, lo, hi)
        mesh_pts = np.concatenate([mesh_pts, extra[:, None]])

    mu_mesh = np.asarray(model.drift(xi[None, :], mesh_pts[:, None, :])) * np.ones((1, xi.size))
    s2_mesh = np.asarray(model.sigma2_eff(xi[None, :], mesh_pts[:, None, :])) * np.ones((1, xi.size))
    s_mesh = stencil_diffusion(mu_mesh, s2_mesh, dx)

    if analytic:
        mu_max, s2_max, _ = model.coefficient_bounds()
    else:
        mu_max, s2_max = float(np.abs(mu_mesh).max()), float(s2_mesh.max())
    Nt = grid.n_steps(mu_max, s2_max, model.T)
    dt = model.T / Nt

    values = np.empty((Nt + 1, grid.Nx))
    controls = np.empty((Nt, grid.Nx, model.k))
    drift = np.empty((Nt, grid.Nx))
    sdiff = np.empty((Nt, grid.Nx))
    v = np.array(terminal(x), dtype=float).reshape(grid.Nx)
    values[Nt] = v
    n_mesh = mesh_pts.shape[0]
    cols = np.arange(xi.size)
    eta2 = model.eta**2

    for n in range(Nt - 1, -1, -1):
        H = apply_generator(v, mu_mesh, s_mesh, dx)
        if analytic:
            a_node = _node_candidates(q, v, dx, lo, hi)
            mu_node = q.drift(a_node)
            s_node = stencil_diffusion(mu_node, q.sigma2(a_node) + eta2, dx)
            H = np.concatenate([H, apply_generator(v, mu_node, s_node, dx)])
        j = np.argmin(H, axis=0)
        best = H[j, cols]
        if analytic:
            from_mesh = j < n_mesh
            jm = np.minimum(j, n_mesh - 1)
            jn = np.maximum(j - n_mesh, 0)
            a_star = np.where(from_mesh, mesh_pts[jm, 0], a_node[jn, cols])
            mu_star = np.where(from_mesh, mu_mesh[jm, cols], mu_node[jn, cols])
            s_star = np.where(from_mesh, s_mesh[jm, cols], s_node[jn, cols])
            controls[n, 1:-1, 0] = a_star
        else:
            controls[n, 1:-1] = mesh_pts[j]
            mu_star = mu_mesh[j, cols]
            s_star = s_mesh[j, cols]
        drift[n, 1:-1] = mu_star
        sdiff[n, 1:-1] = s_star
        v_new = np.empty_like(v)
        v_new[1:-1] = v[1:-1] + dt * best
        extrapolate_boundary(v_new)
        v = v_new
        values[n] = v

    for arr in (controls, drift, sdiff):
        arr[:, 0] = arr[:, 1]
        arr[:, -1] = arr[:, -2]
    policy = FeedbackPolicy(grid, model.T, controls, drift, sdiff)
    return ValueSolution(grid, values, policy)


def value_at(sol: ValueSolution, x: float) -> float:
    """Linear interpolation of the t = 0 row."""
    if not sol.grid.contains(x):
        raise SolverError(f"x={x} outside grid [{sol.grid.x_min}, {sol.grid.x_max}]")
    return float(np.interp(x, sol.grid.nodes, sol.values[0]))
