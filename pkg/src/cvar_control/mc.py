"""Monte Carlo oracle: Euler-Maruyama paths, sample risk statistics, normal baselines."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dynamics import SdeModel
from .hjb import FeedbackPolicy, ValueSolution
from .risk import SmoothedRiskSpec

BLOCK = 8192


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimBatch:
    terminal_values: np.ndarray
    n_paths: int
    dt: float
    seed: int
    # recorded paths: (n_record, n_steps + 1) each; None unless requested
    times: np.ndarray | None = None
    paths: np.ndarray | None = None
    controls: np.ndarray | None = None
    stock: np.ndarray | None = None


def _block_paths(model: SdeModel, policy, start, size, n_steps, dt, rng, x_limit, n_record):
    x = np.full(size, float(model.x0))
    comp = np.zeros(size)
    d = 1
    if model.loading is not None:
        d = model.market.k if model.market is not None else model.k
    market = model.market
    rec = n_record > 0
    if rec:
        xs = np.empty((n_record, n_steps + 1))
        acts = np.empty((n_record, n_steps + 1))
        stock = np.zeros((n_record, n_steps + 1))
        xs[:, 0] = x[:n_record]
    sqdt = np.sqrt(dt)
    const = None if isinstance(policy, FeedbackPolicy) else np.broadcast_to(policy, (size, model.k))
    for i in range(n_steps):
        t = i * dt
        a = const if const is not None else policy.control_at(t, x)
        z = rng.standard_normal((size, d))
        zhat = rng.standard_normal(size)
        mu = np.asarray(model.drift(x, a)) * np.ones(size)
        if model.loading is not None:
            diff = np.einsum("pi,pi->p", np.asarray(model.loading(x, a)) * np.ones((size, d)), z)
        else:
            diff = np.asarray(model.diffusion(x, a)) * z[:, 0]
        inc = mu * dt + sqdt * (diff + model.eta * zhat)
        # Neumaier-compensated update: long runs of tiny increments keep full precision
        s = x + inc
        comp += np.where(np.abs(x) >= np.abs(inc), (x - s) + inc, (inc - s) + x)
        x = s
        if not np.all(np.abs(x) <= x_limit):
            bad = int(np.argmax(np.abs(x) > x_limit))
            raise SimulationError(f"path {start + bad} left |x| <= {x_limit:g} at t={t + dt:.4g}: x={x[bad]:.4g}")
        if rec:
            xs[:, i + 1] = x[:n_record] + comp[:n_record]
            acts[:, i] = a[:n_record, 0]
            if market is not None:
                dlog = (market.mu[0] - 0.5 * market.Sigma[0, 0]) * dt + sqdt * (z[:n_record] @ market.sqrt_Sigma)[:, 0]
                stock[:, i + 1] = stock[:, i] + dlog
    x = x + comp
    if rec:
        acts[:, -1] = acts[:, -2] if n_steps else 0.0
        return x, (xs, acts, stock)
    return x, None


def simulate(model: SdeModel, policy, n_paths: int = 100_000, dt: float | None = None, seed: int = 0,
             threads: int = 1, record: int = 0) -> SimBatch:
    """Euler-Maruyama simulation of X under a feedback policy or a constant control.

    Paths are generated in fixed blocks of ``BLOCK`` with one spawned stream per
    block, so the output is bit-identical for any ``threads``.  The first
    ``record`` paths keep their trajectories (and the first asset's log-price).
    """
    if isinstance(policy, ValueSolution):
        policy = policy.policy
    if not isinstance(policy, FeedbackPolicy):
        policy = np.atleast_1d(np.asarray(policy, dtype=float))
    dt = model.T / 500 if dt is None else dt
    if not dt > 0:
        raise SimulationError("dt must be positive")
    if dt > model.T:
        raise SimulationError("dt must not exceed T")
    if n_paths < 1:
        raise SimulationError("n_paths must be positive")
    n_steps = int(round(model.T / dt))
    dt = model.T / n_steps
    if isinstance(policy, FeedbackPolicy):
        g = policy.grid
        x_limit = 10.0 * max(abs(g.x_min), abs(g.x_max), 1.0)
    else:
        x_limit = 10.0 * (abs(model.x0) + 10.0 * np.sqrt(model.T) * (1.0 + np.sqrt(model.coefficient_bounds()[1])) + 1.0)
    n_blocks = -(-n_paths // BLOCK)
    streams = np.random.SeedSequence(seed).spawn(n_blocks)

    def run(b):
        start = b * BLOCK
        size = min(BLOCK, n_paths - start)
        rng = np.random.Generator(np.random.Philox(streams[b]))
        n_rec = min(record - start, size) if record > start else 0
        return _block_paths(model, policy, start, size, n_steps, dt, rng, x_limit, n_rec)

    if threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, range(n_blocks)))
    else:
        results = [run(b) for b in range(n_blocks)]
    terminal = np.concatenate([r[0] for r in results])
    recs = [r[1] for r in results if r[1] is not None]
    if recs:
        xs, acts, stock = (np.concatenate(parts) for parts in zip(*recs))
        times = np.linspace(0.0, model.T, n_steps + 1)
        return SimBatch(terminal, n_paths, dt, seed, times, xs, acts, stock)
    return SimBatch(terminal, n_paths, dt, seed)


# --------------------------------------------------------------------------- statistics


def _check(values, alpha, lo_open=False):
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty sample")
    if not (0.0 <= alpha < 1.0):
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return v


def _cvar_sorted(v, w, alpha):
    """RU minimum for the sorted support ``v`` with integer multiplicities ``w``.

    The objective is convex and piecewise linear with its minimum at the first
    support point whose cumulative weight reaches alpha * n; the two neighbours
    are also evaluated to be safe against rounding in alpha * n.
    """
    n = int(w.sum())
    k = int(np.searchsorted(np.cumsum(w), alpha * n, side="left"))
    lo = max(k - 1, 0)
    tail_v, tail_w = v[lo:], w[lo:]
    best = np.inf
    for y in v[lo:min(k + 2, v.size)]:
        excess = float(tail_w @ np.maximum(tail_v - y, 0.0))
        best = min(best, y + excess / ((1.0 - alpha) * n))
    return float(best)


def sample_cvar(values, alpha: float) -> float:
    """min over sample points y of ``y + mean((xi - y)^+) / (1 - alpha)``."""
    v = np.sort(_check(values, alpha))
    return _cvar_sorted(v, np.ones(v.size, dtype=np.int64), alpha)


def sample_var(values, alpha: float) -> float:
    """Empirical alpha-quantile ``inf {x : F_n(x) >= alpha}``."""
    v = np.sort(_check(values, alpha))
    k = max(int(np.ceil(alpha * v.size - 1e-12)), 1)
    return float(v[k - 1])


def bootstrap_cvar_stderr(values, alpha: float, n_boot: int = 200, seed: int = 0) -> float:
    """Standard deviation of sample_cvar over resamples with replacement.

    A resample of the sorted data is a set of multiplicities, so each replicate
    is a weighted tail sum without re-sorting.
    """
    v = np.sort(_check(values, alpha))
    rng = np.random.default_rng(seed)
    reps = [_cvar_sorted(v, np.bincount(rng.integers(0, v.size, v.size), minlength=v.size), alpha)
            for _ in range(n_boot)]
    return float(np.std(reps, ddof=1))


@dataclass(frozen=True)
class ObjectiveEstimate:
    mean: float
    stderr: float
    grad: np.ndarray
    grad_stderr: np.ndarray


def estimate_objective_and_gradient(batch: SimBatch, smoothed: SmoothedRiskSpec, y,
                                    cost=None) -> ObjectiveEstimate:
    """Sample means of f_eps(g(X_T), y) and D_y f_eps(g(X_T), y) with standard errors."""
    xt = batch.terminal_values
    c = -xt if cost is None else cost(xt)
    vals = smoothed.f_eps(c, y)
    grads = smoothed.dyf_eps(c, y)
    n = xt.size
    # shift by the first sample so a point mass gives an exactly zero spread
    se = lambda a: np.std(a - a[0], axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(a[0])  # noqa: E731
    return ObjectiveEstimate(float(vals.mean()), float(se(vals)), grads.mean(axis=0), se(grads))


def normal_cvar(mean_loss: float, sd: float, alpha: float) -> float:
    """CVaR_alpha of a Normal(mean_loss, sd^2) loss."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if sd < 0:
        raise ValueError("sd must be nonnegative")
    z = stats.norm.ppf(alpha)
    return float(mean_loss + sd * stats.norm.pdf(z) / (1.0 - alpha))


def ecdf(values) -> np.ndarray:
    """Sorted ``(value, rank / n)`` pairs, shape (n, 2)."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    return np.column_stack([v, np.arange(1, v.size + 1) / v.size])
