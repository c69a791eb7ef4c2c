"""Command line front end: solve, frontier, simulate, converge, gradcheck.

Every command reads an INI config (see ``config.DEFAULTS``), writes CSV files with
the resolved config echoed as ``#`` lines, and exits with 0 on success, 2 on a
config error, 3 on a solver error and 4 when a built-in check fails.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from . import mc
from .config import Config, ConfigError, load_config
from .dynamics import MarketParams, ModelError, SdeModel, perturb, portfolio_model
from .hjb import ControlMesh, FeedbackPolicy, SolverError, SolverGrid
from .linpde import solve_linear_pde, statistic_at_origin
from .outer import BilevelResult, DescentConfig, evaluate, minimize, suboptimality_bound
from .risk import RiskSpec, RiskSpecError, SmoothedRiskSpec, inf_convolve, make_spec

log = logging.getLogger("cvar_control")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4
RATIO_BAND = (1.5, 2.6)


# --------------------------------------------------------------------------- problem assembly


def market_params(cfg: Config) -> MarketParams:
    mu = cfg.floats("market", "mu")
    vol = cfg.floats("market", "sigma")
    if vol.size != mu.size:
        raise ConfigError(f"{cfg.source}: [market] sigma needs {mu.size} entries, got {vol.size}")
    if np.any(vol < 0):
        raise ConfigError(f"{cfg.source}: [market] sigma must be nonnegative")
    rho = cfg.float("market", "correlation")
    corr = np.full((mu.size, mu.size), rho)
    np.fill_diagonal(corr, 1.0)
    Sigma = corr * np.outer(vol, vol)
    return MarketParams(mu, Sigma, cfg.float("market", "r"),
                        np.full(mu.size, cfg.float("market", "lower")),
                        np.full(mu.size, cfg.float("market", "upper")))


def risk_eta(cfg: Config, eps: float) -> float:
    eta = cfg.float("risk", "eta", optional=True)
    return eps if eta is None else eta


def build_model(cfg: Config, eta: float | None = None) -> SdeModel:
    if eta is None:
        eta = risk_eta(cfg, cfg.float("risk", "epsilon"))
    return portfolio_model(market_params(cfg), cfg.float("market", "T"), eta=eta,
                           x0=cfg.float("market", "x0"))


def build_spec(cfg: Config, lam: float | None = None) -> RiskSpec:
    kind = cfg.raw("risk", "kind")
    lam = cfg.float("risk", "lambda") if lam is None else lam
    return make_spec(kind, alpha=cfg.float("risk", "alpha"), lam=lam)


def build_mesh(cfg: Config, model: SdeModel) -> ControlMesh:
    const = cfg.floats("solver", "control", optional=True)
    if const is not None:
        if const.size != model.k:
            raise ConfigError(f"{cfg.source}: [solver] control needs {model.k} entries")
        if np.any(const < model.lower) or np.any(const > model.upper):
            raise ConfigError(f"{cfg.source}: [solver] control outside the leverage box")
        return ControlMesh.constant(const)
    return ControlMesh.box(model, cfg.int("solver", "control_points"), cfg.bool("solver", "analytic"))


def build_grid(cfg: Config, model: SdeModel) -> SolverGrid:
    return SolverGrid.default(model, Nx=cfg.int("solver", "nx"), sigmas=cfg.float("solver", "sigmas"),
                              nt_cap=cfg.int("solver", "nt_cap"))


def descent_config(cfg: Config) -> DescentConfig:
    y0 = cfg.floats("descent", "y0", optional=True)
    try:
        return DescentConfig(
            y0=None if y0 is None else tuple(y0),
            grad_tol=cfg.float("descent", "grad_tol"),
            max_iters=cfg.int("descent", "max_iters"),
            armijo_c=cfg.float("descent", "armijo_c"),
            initial_step=cfg.float("descent", "initial_step", optional=True),
            convex_mode=cfg.bool("descent", "convex_mode"),
            seed=cfg.int("mc", "seed"),
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.source}: [descent] {exc}") from None


@dataclass
class Problem:
    model: SdeModel
    spec: RiskSpec
    smoothed: SmoothedRiskSpec
    grid: SolverGrid
    mesh: ControlMesh
    descent: DescentConfig
    epsilon: float


def build_problem(cfg: Config, lam: float | None = None, eps: float | None = None,
                  eta: float | None = None) -> Problem:
    eps = cfg.float("risk", "epsilon") if eps is None else eps
    if not eps > 0:
        raise ConfigError(f"{cfg.source}: [risk] epsilon must be positive")
    eta = risk_eta(cfg, eps) if eta is None else eta
    model = build_model(cfg, eta)
    spec = build_spec(cfg, lam)
    return Problem(model, spec, inf_convolve(spec, eps), build_grid(cfg, model), build_mesh(cfg, model),
                   descent_config(cfg), eps)


def solve_problem(p: Problem) -> BilevelResult:
    return minimize(p.descent, p.smoothed, p.model, p.grid, p.mesh)


def expected_return(model: SdeModel, result: BilevelResult) -> float:
    """E[X_T] under the optimal feedback policy, from the statistic PDE with terminal x."""
    w = solve_linear_pde(model, result.solution, lambda x: x)
    return float(statistic_at_origin(w, model.x0)[0])


# --------------------------------------------------------------------------- static strategies


def static_point(params: MarketParams, a, alpha: float, T: float, eta: float = 0.0) -> tuple[float, float]:
    """(E[X_T], CVaR_alpha(-X_T)) for the constant leverage ``a``; X_T is normal."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    quad = float(a @ params.Sigma @ a)
    mean = (params.r + float(a @ (params.mu - params.r)) - 0.5 * quad) * T
    sd = math.sqrt((quad + eta * eta) * T)
    return mean, mc.normal_cvar(-mean, sd, alpha)


def static_optimum(params: MarketParams, lam: float, alpha: float, T: float,
                   n_points: int = 241) -> tuple[np.ndarray, float, float]:
    """Constant leverage minimising ``-E[X_T] + lam * CVaR``; returns (a, return, cvar).

    Candidates are a dense box sweep plus, for one asset, the stationary points
    of the two smooth pieces (a > 0 and a < 0) clipped to the box.
    """
    axes = [np.linspace(lo, hi, n_points) for lo, hi in zip(params.lower, params.upper)]
    cands = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    if params.k == 1:
        s = math.sqrt(params.Sigma[0, 0])
        c = stats.norm.pdf(stats.norm.ppf(alpha)) / (1.0 - alpha)
        extra = [0.0]
        if s > 0:
            ex = params.mu[0] - params.r
            for sign in (1.0, -1.0):
                extra.append((ex - sign * lam * s * c / ((1.0 + lam) * math.sqrt(T))) / s**2)
        extra = np.clip(extra, params.lower[0], params.upper[0])
        cands = np.concatenate([cands, extra[:, None]])
    best = None
    for a in cands:
        ret, cv = static_point(params, a, alpha, T)
        obj = -ret + lam * cv
        key = (obj, float(np.linalg.norm(a)))
        if best is None or key < best[0]:
            best = (key, a, ret, cv)
    return best[1], best[2], best[3]


# --------------------------------------------------------------------------- experiments


@dataclass
class FrontierPoint:
    lam: float
    expected_return: float
    cvar: float
    y_star: float
    V_star: float
    bound: float
    iterations: int
    static_return: float
    static_cvar: float
    converged: bool = True
    mc_return: float = math.nan
    mc_cvar: float = math.nan
    mc_cvar_se: float = math.nan


def lambda_grid(cfg: Config) -> np.ndarray:
    lams = cfg.floats("frontier", "lambdas", optional=True)
    if lams is None:
        n = cfg.int("frontier", "n_lambda")
        lo = cfg.float("frontier", "lambda_min")
        if n < 1 or not 0.0 < lo <= 1.0:
            raise ConfigError(f"{cfg.source}: [frontier] needs n_lambda >= 1 and 0 < lambda_min <= 1")
        lams = np.geomspace(lo, 1.0, n)
    lams = np.sort(np.asarray(lams, dtype=float))
    if np.any(lams <= 0) or np.any(lams > 1):
        raise ConfigError(f"{cfg.source}: [frontier] every lambda must lie in (0, 1]")
    return lams


def frontier_epsilon(cfg: Config, lam: float) -> float:
    """Smoothing parameter at ``lam``.

    The CVaR term is smoothed with width proportional to ``lam * eps`` on the
    loss axis, so holding that product fixed keeps the kink resolved on the
    grid for every lambda.
    """
    delta = cfg.float("frontier", "loss_smoothing", optional=True)
    if delta is None:
        return cfg.float("risk", "epsilon")
    if not delta > 0:
        raise ConfigError(f"{cfg.source}: [frontier] loss_smoothing must be positive")
    return delta / lam


def frontier_eta(cfg: Config) -> float | None:
    """Explicit [risk] eta, else the loss smoothing width (eta = epsilon would grow as 1/lambda)."""
    eta = cfg.float("risk", "eta", optional=True)
    if eta is None:
        eta = cfg.float("frontier", "loss_smoothing", optional=True)
    return eta


def frontier_point(cfg: Config, lam: float, threads: int = 1, mc_check: bool = False) -> FrontierPoint:
    p = build_problem(cfg, lam=lam, eps=frontier_epsilon(cfg, lam), eta=frontier_eta(cfg))
    if p.spec.kind != "mean_cvar":
        raise ConfigError(f"{cfg.source}: frontier needs [risk] kind = mean_cvar")
    res = solve_problem(p)
    ret = expected_return(p.model, res)
    cvar = (res.V_star + ret) / lam
    params = p.model.market
    alpha = cfg.float("risk", "alpha")
    _, s_ret, s_cvar = static_optimum(params, lam, alpha, p.model.T, cfg.int("frontier", "static_points"))
    pt = FrontierPoint(lam, ret, cvar, float(res.y_star[0]), res.V_star,
                       suboptimality_bound(p.spec, p.model, p.epsilon, p.model.eta),
                       res.iterations, s_ret, s_cvar, res.converged)
    if mc_check:
        batch = simulate_batch(cfg, p.model, res.solution.policy, threads)
        loss = -batch.terminal_values
        pt.mc_return = float(batch.terminal_values.mean())
        pt.mc_cvar = mc.sample_cvar(loss, alpha)
        pt.mc_cvar_se = mc.bootstrap_cvar_stderr(loss, alpha, seed=cfg.int("mc", "seed"))
    log.info("lambda=%.4g return=%.5f cvar=%.5f iters=%d", lam, ret, cvar, res.iterations)
    return pt


def run_frontier(cfg: Config, threads: int = 1) -> list[FrontierPoint]:
    lams = lambda_grid(cfg)
    mc_check = cfg.bool("frontier", "mc_check")
    job = lambda lam: frontier_point(cfg, float(lam), 1, mc_check)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            pts = list(ex.map(job, lams))
    else:
        pts = [job(lam) for lam in lams]
    return sorted(pts, key=lambda q: q.lam)


def static_best_return(params: MarketParams, cvar_cap: float, alpha: float, T: float,
                       n_points: int = 24001) -> float:
    """Largest static expected log-return whose CVaR does not exceed ``cvar_cap`` (-inf if none)."""
    axes = [np.linspace(lo, hi, n_points if params.k == 1 else 401) for lo, hi in zip(params.lower, params.upper)]
    a = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)
    quad = np.einsum("pi,ij,pj->p", a, params.Sigma, a)
    mean = (params.r + a @ (params.mu - params.r) - 0.5 * quad) * T
    c = stats.norm.pdf(stats.norm.ppf(alpha)) / (1.0 - alpha)
    cvar = -mean + np.sqrt(quad * T) * c
    ok = cvar <= cvar_cap
    return float(mean[ok].max()) if np.any(ok) else -math.inf


def dominance_violations(points: list[FrontierPoint], params: MarketParams, alpha: float, T: float,
                         tol: float = 1e-3, use_mc: bool = False) -> list[tuple[float, float, float]]:
    """Dynamic points beaten by a static strategy: (lambda, dynamic return, best static return).

    A static strategy beats the point if its CVaR is no larger and its expected
    return is higher by more than ``tol``.
    """
    out = []
    for d in points:
        ret, cvar = (d.mc_return, d.mc_cvar) if use_mc else (d.expected_return, d.cvar)
        best = static_best_return(params, cvar, alpha, T)
        if best > ret + tol:
            out.append((d.lam, ret, best))
    return out


def matched_cvar(points: list[FrontierPoint], target: float) -> float:
    """Dynamic CVaR at expected return ``target`` by linear interpolation along the frontier."""
    pts = sorted(points, key=lambda q: q.expected_return)
    r = np.array([q.expected_return for q in pts])
    c = np.array([q.cvar for q in pts])
    if not r[0] <= target <= r[-1]:
        return math.nan
    return float(np.interp(target, r, c))


@dataclass
class MatchedSolve:
    lam: float
    expected_return: float
    result: BilevelResult
    problem: Problem


def match_lambda(cfg: Config, target: float, lo: float = 0.01, hi: float = 1.0,
                 xtol: float = 1e-3) -> MatchedSolve:
    """Find lambda whose optimal policy has expected log-return ``target`` (Brent on log lambda)."""
    cache: dict[float, MatchedSolve] = {}

    def solve_at(loglam):
        lam = float(math.exp(loglam))
        if lam not in cache:
            p = build_problem(cfg, lam=lam, eps=frontier_epsilon(cfg, lam), eta=frontier_eta(cfg))
            res = solve_problem(p)
            cache[lam] = MatchedSolve(lam, expected_return(p.model, res), res, p)
        return cache[lam]

    g = lambda u: solve_at(u).expected_return - target  # noqa: E731
    a, b = math.log(lo), math.log(hi)
    ga, gb = g(a), g(b)
    if ga * gb > 0:
        raise SolverError(f"target return {target} not bracketed by lambda in [{lo}, {hi}]")
    u = optimize.brentq(g, a, b, xtol=xtol)
    return solve_at(u)


def converge_table(cfg: Config) -> tuple[list[dict], float]:
    eps_list = cfg.floats("converge", "epsilons")
    if eps_list.size < 3:
        raise ConfigError(f"{cfg.source}: [converge] epsilons needs at least 3 values")
    if np.any(np.diff(eps_list) >= 0) or np.any(eps_list <= 0):
        raise ConfigError(f"{cfg.source}: [converge] epsilons must be positive and strictly descending")
    fixed_eta = cfg.float("converge", "eta", optional=True)

    def value(eps):
        eta = eps if fixed_eta is None else fixed_eta
        p = build_problem(cfg, eps=eps, eta=eta)
        res = solve_problem(p)
        return res, p

    ref_eps = eps_list[-1] / 2.0
    ref_res, _ = value(ref_eps)
    solved = [value(e) for e in eps_list]
    # linear extrapolation to zero from the two finest levels
    v_ref = 2.0 * ref_res.V_star - solved[-1][0].V_star
    rows = []
    for e, (res, p) in zip(eps_list, solved):
        rows.append({
            "epsilon": float(e),
            "eta": p.model.eta,
            "V_eps": res.V_star,
            "error_vs_reference": abs(res.V_star - v_ref),
            "theory_bound": suboptimality_bound(p.spec, p.model, float(e), p.model.eta),
        })
    return rows, v_ref


def converge_failures(rows: list[dict]) -> list[str]:
    fails = []
    errs = [r["error_vs_reference"] for r in rows]
    for i in range(len(errs) - 1):
        ratio = errs[i] / errs[i + 1] if errs[i + 1] > 0 else math.inf
        if not RATIO_BAND[0] <= ratio <= RATIO_BAND[1]:
            fails.append(f"error ratio eps={rows[i]['epsilon']:g}/{rows[i + 1]['epsilon']:g} = {ratio:.4g} "
                         f"outside [{RATIO_BAND[0]}, {RATIO_BAND[1]}]")
    for r in rows:
        if r["error_vs_reference"] > r["theory_bound"]:
            fails.append(f"error {r['error_vs_reference']:.4g} exceeds bound {r['theory_bound']:.4g} "
                         f"at eps={r['epsilon']:g}")
    return fails


def gradcheck_table(cfg: Config) -> list[dict]:
    p = build_problem(cfg)
    h = cfg.float("gradcheck", "h")
    ys = np.linspace(cfg.float("gradcheck", "y_min"), cfg.float("gradcheck", "y_max"),
                     cfg.int("gradcheck", "n_points"))
    m = p.spec.m
    rows = []
    for y in ys:
        yv = np.full(m, y)
        ev = evaluate(yv, p.smoothed, p.model, p.grid, p.mesh)
        for j in range(m):
            e = np.zeros(m)
            e[j] = h
            vp = evaluate(yv + e, p.smoothed, p.model, p.grid, p.mesh).V
            vm = evaluate(yv - e, p.smoothed, p.model, p.grid, p.mesh).V
            fd = (vp - vm) / (2.0 * h)
            dv = float(ev.DV[j])
            rel = abs(dv - fd) / abs(fd) if fd != 0 else abs(dv - fd)
            rows.append({"y": float(y), "component": j, "V": ev.V, "DV": dv, "finite_difference": fd,
                         "relative_deviation": rel})
    return rows


# --------------------------------------------------------------------------- simulation and I/O


def simulate_batch(cfg: Config, model: SdeModel, policy, threads: int = 1, record: int = 0) -> mc.SimBatch:
    return mc.simulate(model, policy, n_paths=cfg.int("mc", "n_paths"), dt=cfg.float("mc", "dt", optional=True),
                       seed=cfg.int("mc", "seed"), threads=threads, record=record)


def save_policy(path: Path, policy: FeedbackPolicy, y_star=None) -> None:
    g = policy.grid
    np.savez_compressed(path, x_min=g.x_min, x_max=g.x_max, Nx=g.Nx, T=policy.T, controls=policy.controls,
                        drift=policy.drift, stencil_diffusion=policy.stencil_diffusion,
                        y_star=np.asarray([] if y_star is None else y_star, dtype=float))


def load_policy(path) -> FeedbackPolicy:
    try:
        with np.load(path) as z:
            grid = SolverGrid(float(z["x_min"]), float(z["x_max"]), int(z["Nx"]), Nt=z["controls"].shape[0])
            return FeedbackPolicy(grid, float(z["T"]), z["controls"], z["drift"], z["stencil_diffusion"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load policy artifact {path}: {exc}") from None


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.12g}"


def write_csv(path: Path, header: list[str], rows, cfg: Config | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if cfg is not None:
            fh.write(cfg.echo())
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _seeded(cfg: Config, seed: int | None) -> Config:
    if seed is not None:
        if seed < 0 or seed >= 2**64:
            raise ConfigError(f"--seed must be an unsigned 64-bit integer, got {seed}")
        cfg.set("mc", "seed", seed)
    return cfg


# --------------------------------------------------------------------------- commands


def cmd_solve(cfg: Config, out: Path, threads: int) -> int:
    p = build_problem(cfg)
    res = solve_problem(p)
    ret = expected_return(p.model, res)
    ycols = [f"y_star_{i}" for i in range(p.spec.m)]
    header = ycols + ["V_star", "grad_norm", "iterations", "converged", "bound_eps", "bound_eta",
                      "global_flag", "expected_return"]
    row = [*res.y_star, res.V_star, res.grad_norm, res.iterations, res.converged, res.bound_eps,
           res.bound_eta, res.global_flag, ret]
    write_csv(out / "solve.csv", header, [row], cfg)
    save_policy(out / "policy.npz", res.solution.policy, res.y_star)
    print(f"y*={np.array2string(res.y_star, precision=8)} V*={res.V_star:.10g} |DV|={res.grad_norm:.3g} "
          f"iterations={res.iterations} converged={res.converged} bound={res.bound:.6g} "
          f"global={res.global_flag} E[X_T]={ret:.8g}")
    if not res.converged:
        print(f"check failed: |DV| = {res.grad_norm:.3g} > grad_tol after {res.iterations} iterations",
              file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


FRONTIER_COLUMNS = ["lambda", "expected_return", "cvar", "y_star", "V_star", "bound", "iterations",
                    "static_return", "static_cvar"]


def cmd_frontier(cfg: Config, out: Path, threads: int) -> int:
    pts = run_frontier(cfg, threads)
    mc_check = cfg.bool("frontier", "mc_check")
    header = FRONTIER_COLUMNS + (["mc_return", "mc_cvar", "mc_cvar_se"] if mc_check else [])
    rows = []
    for q in pts:
        row = [q.lam, q.expected_return, q.cvar, q.y_star, q.V_star, q.bound, q.iterations,
               q.static_return, q.static_cvar]
        if mc_check:
            row += [q.mc_return, q.mc_cvar, q.mc_cvar_se]
        rows.append(row)
    write_csv(out / "frontier.csv", header, rows, cfg)
    for q in pts:
        print(f"lambda={q.lam:.4g} return={q.expected_return:.6f} cvar={q.cvar:.6f} "
              f"static=({q.static_return:.6f}, {q.static_cvar:.6f})")
    bad = [q.lam for q in pts if not q.converged]
    if bad:
        print(f"check failed: descent did not converge for lambda in {bad}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_converge(cfg: Config, out: Path, threads: int) -> int:
    rows, v_ref = converge_table(cfg)
    cols = ["epsilon", "eta", "V_eps", "error_vs_reference", "theory_bound"]
    write_csv(out / "converge.csv", cols, [[r[c] for c in cols] for r in rows], cfg)
    print(f"reference V = {v_ref:.10g}")
    for r in rows:
        print(f"eps={r['epsilon']:g} eta={r['eta']:g} V={r['V_eps']:.10g} "
              f"error={r['error_vs_reference']:.4g} bound={r['theory_bound']:.4g}")
    fails = converge_failures(rows)
    for f in fails:
        print(f"check failed: {f}", file=sys.stderr)
    return EXIT_CHECK if fails else EXIT_OK


def cmd_gradcheck(cfg: Config, out: Path, threads: int) -> int:
    rows = gradcheck_table(cfg)
    cols = ["y", "component", "V", "DV", "finite_difference", "relative_deviation"]
    write_csv(out / "gradcheck.csv", cols, [[r[c] for c in cols] for r in rows], cfg)
    worst = max(r["relative_deviation"] for r in rows)
    tol = cfg.float("gradcheck", "tol")
    print(f"max relative deviation = {worst:.6g} (tolerance {tol:g})")
    if worst > tol:
        print("check failed: gradient PDE disagrees with finite differences", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_simulate(cfg: Config, out: Path, threads: int) -> int:
    model = build_model(cfg)
    path = cfg.raw("simulate", "policy")
    target = cfg.float("simulate", "target_return", optional=True)
    if path:
        policy = load_policy(path)
        if not math.isclose(policy.T, model.T):
            raise ConfigError(f"policy horizon {policy.T} differs from [market] T = {model.T}")
    elif target is not None:
        matched = match_lambda(cfg, target)
        print(f"matched lambda = {matched.lam:.6g} (E[X_T] = {matched.expected_return:.6f})")
        model = matched.problem.model
        policy = matched.result.solution.policy
    else:
        res = solve_problem(build_problem(cfg))
        policy = res.solution.policy
    record = cfg.int("mc", "record")
    dyn = simulate_batch(cfg, model, policy, threads, record)
    static = simulate_batch(cfg, perturb(model, 0.0), np.ones(model.k), threads)
    write_csv(out / "ecdf_dynamic.csv", ["value", "cdf"], mc.ecdf(dyn.terminal_values), cfg)
    write_csv(out / "ecdf_static.csv", ["value", "cdf"], mc.ecdf(static.terminal_values), cfg)
    rows = []
    if dyn.paths is not None:
        for i in range(dyn.paths.shape[0]):
            for j, t in enumerate(dyn.times):
                rows.append([i, t, dyn.stock[i, j], dyn.paths[i, j], dyn.controls[i, j]])
    write_csv(out / "paths.csv", ["path", "t", "stock_log_return", "portfolio_log_return", "leverage"], rows, cfg)
    alpha = cfg.float("risk", "alpha")
    for name, b in (("dynamic", dyn), ("static a=1", static)):
        x = b.terminal_values
        loss = -x
        print(f"{name}: mean={x.mean():.6f} (se {x.std(ddof=1) / math.sqrt(x.size):.2g}) "
              f"cvar={mc.sample_cvar(loss, alpha):.6f} (se {mc.bootstrap_cvar_stderr(loss, alpha):.2g})")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "frontier": cmd_frontier,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cvar-control", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", default=None, help="INI file; omitted keys take the documented defaults")
    ap.add_argument("--out", default=".", help="output directory (created if missing)")
    ap.add_argument("--seed", type=int, default=None, help="overrides [mc] seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads; never changes the output")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("config error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _seeded(load_config(args.config), args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args.threads)
    except (ConfigError, RiskSpecError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, mc.SimulationError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
