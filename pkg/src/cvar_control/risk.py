"""Extremal risk integrands, their Moreau-envelope smoothing and coherence checks.

An extremal risk measure is ``rho(xi) = inf_y E[f(xi, y)]`` for a jointly convex
integrand ``f``.  Every built-in integrand here is a *separable* sum

    f(x, y) = mean_weight * x + sum_i weight_i * term_i(x, y[index_i])

where each term is one of the scalar building blocks

    cvar      z + (x - z)^+ / (1 - alpha)
    variance  (x - z)^2
    mad       |x - z|

Separability makes the inf-convolution decouple per coordinate, so each term is
smoothed independently with the effective parameter ``weight * eps``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize

KINDS = ("pure_cvar", "mean_cvar", "variance", "mean_variance", "mad", "weighted_combination")
TERM_KINDS = ("cvar", "variance", "mad", "custom")

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class RiskSpecError(ValueError):
    """Invalid risk specification parameters."""


class UnboundedLipschitzError(RiskSpecError):
    """Raised where a finite Lipschitz constant in y is required but the spec has none."""


# --------------------------------------------------------------------------- terms


@dataclass(frozen=True)
class Term:
    """One scalar building block ``weight * term(x, y[index])``.

    ``custom`` terms carry their own ``func(x, z)`` / ``grad(x, z)`` (derivative in
    z) and Lipschitz constants; they are smoothed numerically.
    """

    kind: str
    weight: float = 1.0
    alpha: float | None = None
    index: int = 0
    func: Callable | None = field(default=None, compare=False)
    grad: Callable | None = field(default=None, compare=False)
    custom_lipschitz_y: float = np.inf
    custom_lipschitz_x: float = np.inf

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise RiskSpecError(f"unknown term kind {self.kind!r}")
        if self.weight < 0:
            raise RiskSpecError("term weights must be nonnegative")
        if self.kind == "cvar":
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise RiskSpecError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kind == "custom" and (self.func is None or self.grad is None):
            raise RiskSpecError("custom terms need func and grad")

    # unweighted Lipschitz constants of the building block
    @property
    def unit_lipschitz_y(self) -> float:
        if self.kind == "cvar":
            return max(1.0, self.alpha / (1.0 - self.alpha))
        if self.kind == "mad":
            return 1.0
        if self.kind == "variance":
            return np.inf
        return self.custom_lipschitz_y

    @property
    def unit_lipschitz_x(self) -> float:
        if self.kind == "cvar":
            return 1.0 / (1.0 - self.alpha)
        if self.kind == "mad":
            return 1.0
        if self.kind == "variance":
            return np.inf
        return self.custom_lipschitz_x

    def value(self, x, z):
        if self.kind == "cvar":
            return z + np.maximum(x - z, 0.0) / (1.0 - self.alpha)
        if self.kind == "variance":
            return (x - z) ** 2
        if self.kind == "mad":
            return np.abs(x - z)
        return self.func(x, z)

    def dz(self, x, z):
        # kinks resolved by the limit x -> z from below
        if self.kind == "cvar":
            return 1.0 - (x > z) / (1.0 - self.alpha)
        if self.kind == "variance":
            return -2.0 * (x - z)
        if self.kind == "mad":
            return np.where(x > z, -1.0, 1.0)
        return self.grad(x, z)

    def envelope(self, x, y, delta):
        """Closed-form ``inf_z [term(x, z) + (y - z)^2 / (2 delta)]`` and its y-gradient."""
        s = y - x
        if self.kind == "cvar":
            a = self.alpha
            lo = -a / (1.0 - a) * delta
            upper = s > delta
            lower = s < lo
            mid = ~(upper | lower)
            val = np.where(
                upper,
                y - 0.5 * delta,
                np.where(
                    lower,
                    (x - a * y) / (1.0 - a) - 0.5 * (a / (1.0 - a)) ** 2 * delta,
                    x + s**2 / (2.0 * delta),
                ),
            )
            grad = np.where(upper, 1.0, np.where(lower, -a / (1.0 - a), s / delta))
            return val, grad * np.ones_like(val)
        if self.kind == "variance":
            return s**2 / (1.0 + 2.0 * delta), 2.0 * s / (1.0 + 2.0 * delta)
        if self.kind == "mad":
            inside = np.abs(s) <= delta
            val = np.where(inside, s**2 / (2.0 * delta), np.abs(s) - 0.5 * delta)
            grad = np.where(inside, s / delta, np.sign(s))
            return val, grad
        return self.envelope_numeric(x, y, delta)

    def envelope_numeric(self, x, y, delta, tol: float = 1e-12):
        """Envelope by vectorised golden-section search over z."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        lip = self.unit_lipschitz_y
        reach = delta * lip if np.isfinite(lip) else 0.0
        lo = np.minimum(y - reach, x) - 1.0
        hi = np.maximum(y + reach, x) + 1.0

        def obj(z):
            return self.value(x, z) + (y - z) ** 2 / (2.0 * delta)

        c = hi - _GOLDEN * (hi - lo)
        d = lo + _GOLDEN * (hi - lo)
        fc, fd = obj(c), obj(d)
        width = float(np.max(hi - lo))
        n_iter = int(np.ceil(np.log(tol / width) / np.log(_GOLDEN))) + 1
        for _ in range(max(n_iter, 1)):
            left = fc < fd
            hi = np.where(left, d, hi)
            lo = np.where(left, lo, c)
            c_new = hi - _GOLDEN * (hi - lo)
            d_new = lo + _GOLDEN * (hi - lo)
            c, d = np.where(left, c_new, d), np.where(left, c, d_new)
            fc, fd = np.where(left, obj(c), fd), np.where(left, fc, obj(d))
        z = 0.5 * (lo + hi)
        return obj(z), (y - z) / delta


# --------------------------------------------------------------------------- specs


def _as_y(y, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0:
        y = y[None]
    if y.shape[-1] != m:
        raise RiskSpecError(f"expected y with last dimension {m}, got shape {y.shape}")
    return y


@dataclass(frozen=True)
class RiskSpec:
    """Extremal integrand ``f(x, y)`` on cost ``x`` and auxiliary ``y in R^m``."""

    kind: str
    terms: tuple[Term, ...]
    mean_weight: float = 0.0
    alpha: float | None = None
    lam: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RiskSpecError(f"unknown risk kind {self.kind!r}")
        idx = sorted(t.index for t in self.terms)
        if idx != list(range(len(self.terms))):
            raise RiskSpecError("each term needs its own y coordinate 0..m-1")

    @property
    def m(self) -> int:
        return len(self.terms)

    @property
    def lipschitz_y(self) -> float:
        """Uniform Lipschitz constant of ``y -> f(x, y)`` (Euclidean norm)."""
        parts = [t.weight * t.unit_lipschitz_y for t in self.terms if t.weight > 0]
        if any(not np.isfinite(p) for p in parts):
            return np.inf
        return float(np.sqrt(sum(p * p for p in parts)))

    @property
    def lipschitz_x(self) -> float:
        parts = [t.weight * t.unit_lipschitz_x for t in self.terms if t.weight > 0]
        if any(not np.isfinite(p) for p in parts):
            return np.inf
        return float(abs(self.mean_weight) + sum(parts))

    @property
    def bounded(self) -> bool:
        return bool(np.isfinite(self.lipschitz_y))

    def f(self, x, y):
        x = np.asarray(x, dtype=float)
        y = _as_y(y, self.m)
        out = self.mean_weight * x
        for t in self.terms:
            out = out + t.weight * t.value(x, y[..., t.index])
        return out

    def dyf(self, x, y):
        """A subgradient in y; shape ``x.shape + (m,)``."""
        x = np.asarray(x, dtype=float)
        y = _as_y(y, self.m)
        cols = [t.weight * t.dz(x, y[..., t.index]) * np.ones_like(x) for t in self.terms]
        return np.stack(cols, axis=-1)


def make_spec(kind: str, alpha: float | None = None, lam: float = 1.0,
              terms: Sequence[Term] | None = None, mean_weight: float = 0.0) -> RiskSpec:
    """Build a built-in integrand.

    ``weighted_combination`` takes explicit ``terms`` (one y coordinate each) and an
    optional ``mean_weight`` on the cost itself.
    """
    if lam < 0:
        raise RiskSpecError("lambda must be nonnegative")
    if kind in ("pure_cvar", "mean_cvar") and (alpha is None or not 0.0 < alpha < 1.0):
        raise RiskSpecError(f"alpha must lie in (0, 1), got {alpha}")
    if kind == "pure_cvar":
        return RiskSpec(kind, (Term("cvar", 1.0, alpha),), 0.0, alpha, None)
    if kind == "mean_cvar":
        return RiskSpec(kind, (Term("cvar", lam, alpha),), 1.0, alpha, lam)
    if kind == "variance":
        return RiskSpec(kind, (Term("variance"),))
    if kind == "mean_variance":
        return RiskSpec(kind, (Term("variance", lam),), 1.0, None, lam)
    if kind == "mad":
        return RiskSpec(kind, (Term("mad"),))
    if kind == "weighted_combination":
        if not terms:
            raise RiskSpecError("weighted_combination needs at least one term")
        return RiskSpec(kind, tuple(terms), mean_weight, alpha, lam)
    raise RiskSpecError(f"unknown risk kind {kind!r}")


def eval_f(spec: RiskSpec, x, y):
    return spec.f(x, y)


def eval_dyf(spec: RiskSpec, x, y):
    return spec.dyf(x, y)


@dataclass(frozen=True)
class SmoothedRiskSpec:
    """Inf-convolution ``f_eps(x, y) = inf_z [f(x, z) + |y - z|^2 / (2 eps)]``."""

    base: RiskSpec
    epsilon: float
    method: str = "closed"

    @property
    def semiconcavity_M(self) -> float:
        return 1.0 / self.epsilon

    @property
    def m(self) -> int:
        return self.base.m

    def _parts(self, x, y):
        x = np.asarray(x, dtype=float)
        y = _as_y(y, self.base.m)
        val = self.base.mean_weight * x
        grads = []
        for t in self.base.terms:
            if t.weight == 0.0:
                val = val + 0.0 * x
                grads.append(np.zeros_like(x))
                continue
            delta = t.weight * self.epsilon
            yi = y[..., t.index]
            if self.method == "numeric":
                v, g = t.envelope_numeric(x, yi, delta)
            else:
                v, g = t.envelope(x, yi, delta)
            val = val + t.weight * v
            grads.append(t.weight * g * np.ones_like(x))
        return val, np.stack(grads, axis=-1)

    def f_eps(self, x, y):
        return self._parts(x, y)[0]

    def dyf_eps(self, x, y):
        return self._parts(x, y)[1]


def inf_convolve(spec: RiskSpec, eps: float, method: str = "closed") -> SmoothedRiskSpec:
    """Smooth ``spec`` by inf-convolution in y.

    ``method="closed"`` uses the exact piecewise formulas of the built-in terms
    (custom terms always go through golden-section search); ``"numeric"`` forces
    the golden-section path for every term.
    """
    if not eps > 0:
        raise RiskSpecError(f"epsilon must be positive, got {eps}")
    if method not in ("closed", "numeric"):
        raise RiskSpecError(f"unknown method {method!r}")
    return SmoothedRiskSpec(spec, float(eps), method)


def mean_cvar_negated_closed_form(x, y, alpha: float, lam: float, eps: float):
    """Smoothed mean-CVaR integrand evaluated at cost ``-x`` (x is the log-return).

    Three-branch formula, kept verbatim as an independent check on the term-wise
    smoothing.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s = x + y
    k = alpha / (1.0 - alpha) * lam
    return np.where(
        s < -k * eps,
        -x + lam * (y - s / (1.0 - alpha)) - 0.5 * k**2 * eps,
        np.where(s <= lam * eps, s**2 / (2.0 * eps) - (1.0 + lam) * x, -x + lam * y - 0.5 * lam**2 * eps),
    )


def suboptimality_constant(spec: RiskSpec) -> float:
    """``C = L^2 / 2`` with L the Lipschitz constant of f in y."""
    if not spec.bounded:
        raise UnboundedLipschitzError(f"{spec.kind} has no finite Lipschitz constant in y")
    return 0.5 * spec.lipschitz_y**2


# --------------------------------------------------------------------------- cost maps


@dataclass(frozen=True)
class CostMap:
    g: Callable = field(compare=False)
    lipschitz: float
    kind: str = "custom"

    def __call__(self, x):
        return self.g(np.asarray(x, dtype=float))

    @classmethod
    def negate(cls) -> "CostMap":
        return cls(np.negative, 1.0, "negate")

    @classmethod
    def identity(cls) -> "CostMap":
        return cls(lambda x: x, 1.0, "identity")


# --------------------------------------------------------------------------- coherence


def rho_hat(spec: RiskSpec, samples) -> float:
    """``inf_y mean f(xi, y)`` over an equally weighted finite sample.

    The minimisation is separable per term.  Piecewise-linear terms attain their
    minimum on a sample point, so the sample points are always tried alongside a
    bounded Brent search.
    """
    xi = np.asarray(samples, dtype=float).ravel()
    if xi.size == 0:
        raise RiskSpecError("empty sample")
    total = spec.mean_weight * xi.mean()
    for t in spec.terms:
        if t.weight == 0.0:
            continue
        obj = lambda z, t=t: float(np.mean(t.value(xi, z)))  # noqa: E731
        cand = np.unique(xi)
        vals = np.mean(t.value(xi[:, None], cand[None, :]), axis=0)
        best = float(vals.min())
        lo, hi = float(xi.min()) - 1.0, float(xi.max()) + 1.0
        res = optimize.minimize_scalar(obj, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-10})
        best = min(best, float(res.fun))
        total += t.weight * best
    return float(total)


@dataclass
class CoherenceReport:
    passed: dict[str, bool]
    max_violation: dict[str, float]

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def __str__(self) -> str:
        return "\n".join(
            f"{name:22s} {'pass' if ok else 'FAIL'}  (max violation {self.max_violation[name]:.3g})"
            for name, ok in self.passed.items()
        )


def coherence_check(spec: RiskSpec, distributions, tol: float = 1e-8) -> CoherenceReport:
    """Test the four coherence axioms of ``rho_hat`` on finite empirical laws.

    Subadditivity is checked on consecutive pairs of equally sized samples, both
    with the supplied (index-aligned) coupling and the comonotone one; its
    tolerance is ``1e-9``.
    """
    dists = [np.asarray(d, dtype=float).ravel() for d in distributions]
    if not dists:
        raise RiskSpecError("no distributions supplied")
    viol = {"positive_homogeneity": 0.0, "monotonicity": 0.0, "subadditivity": 0.0, "translation": 0.0}
    for xi in dists:
        r = rho_hat(spec, xi)
        scale = 1.0 + abs(r)
        for a in (0.5, 2.0):
            viol["positive_homogeneity"] = max(viol["positive_homogeneity"],
                                               abs(rho_hat(spec, a * xi) - a * r) / scale)
        for bigger in (xi + 0.5 * np.abs(xi - xi.mean()), np.maximum(xi, np.median(xi))):
            viol["monotonicity"] = max(viol["monotonicity"], (r - rho_hat(spec, bigger)) / scale)
        for a in (-1.0, 0.5, 3.0):
            viol["translation"] = max(viol["translation"], abs(rho_hat(spec, xi + a) - (r + a)) / scale)
    for x1, x2 in zip(dists[:-1], dists[1:]):
        if x1.size != x2.size:
            continue
        for p1, p2 in ((x1, x2), (np.sort(x1), np.sort(x2))):
            gap = rho_hat(spec, p1 + p2) - rho_hat(spec, p1) - rho_hat(spec, p2)
            viol["subadditivity"] = max(viol["subadditivity"], gap)
    limits = {"positive_homogeneity": tol, "monotonicity": tol, "subadditivity": 1e-9, "translation": tol}
    passed = {k: bool(viol[k] <= limits[k]) for k in viol}
    return CoherenceReport(passed, viol)
