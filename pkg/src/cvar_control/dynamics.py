"""Controlled one-dimensional SDE models and the log-wealth portfolio instance.

State dimension is fixed to one; controls live in an axis-aligned box in R^k.
Coefficient callables take ``(x, a)`` with ``a[..., k]`` and broadcast over the
leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .risk import CostMap


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class QuadraticCoefficients:
    """Scalar-control coefficients that are state independent and quadratic in a.

    drift(a) = d0 + d1 a + d2 a^2 and sigma(a)^2 = s0 + s1 a + s2 a^2 (before the
    extra perturbation eta).  Lets the HJB solver minimise the discrete Hamiltonian
    exactly over the control interval.
    """

    d0: float
    d1: float
    d2: float
    s0: float
    s1: float
    s2: float

    def drift(self, a):
        return self.d0 + a * (self.d1 + self.d2 * a)

    def sigma2(self, a):
        return self.s0 + a * (self.s1 + self.s2 * a)


@dataclass(frozen=True)
class MarketParams:
    mu: np.ndarray
    Sigma: np.ndarray
    r: float
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        k = mu.size
        if Sigma.shape != (k, k):
            raise ModelError(f"Sigma must be {k}x{k}, got {Sigma.shape}")
        if not np.allclose(Sigma, Sigma.T, atol=1e-14):
            raise ModelError("Sigma must be symmetric")
        if np.linalg.eigvalsh(Sigma).min() < -1e-12:
            raise ModelError("Sigma must be positive semidefinite")
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (k,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (k,)).copy()
        if np.any(lower > upper):
            raise ModelError("leverage lower bound exceeds upper bound")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def k(self) -> int:
        return self.mu.size

    @property
    def sqrt_Sigma(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.Sigma)
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T

    @classmethod
    def single_asset(cls, mu=0.11, sigma=0.20, r=0.01, lower=-6.0, upper=6.0) -> "MarketParams":
        return cls(np.array([mu]), np.array([[sigma**2]]), r, np.array([lower]), np.array([upper]))


@dataclass(frozen=True)
class SdeModel:
    """``dX = drift(X, A) dt + diffusion(X, A) dW + eta dW_hat``, X_0 = x0, on [0, T]."""

    drift: Callable = field(compare=False)
    diffusion: Callable = field(compare=False)
    lower: np.ndarray
    upper: np.ndarray
    x0: float
    T: float
    eta: float = 0.0
    cost: CostMap = field(default_factory=CostMap.negate)
    drift_lipschitz_x: float = 0.0
    diffusion_lipschitz_x: float = 0.0
    quadratic: QuadraticCoefficients | None = None
    # signed loading of each Brownian component, shape a.shape[:-1] + (d,)
    loading: Callable | None = field(default=None, compare=False)
    market: MarketParams | None = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or np.any(lower > upper):
            raise ModelError("invalid control box")
        if not self.T > 0:
            raise ModelError(f"horizon T must be positive, got {self.T}")
        if self.eta < 0:
            raise ModelError(f"eta must be nonnegative, got {self.eta}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def n(self) -> int:
        return 1

    @property
    def k(self) -> int:
        return self.lower.size

    @property
    def lipschitz_x(self) -> float:
        return max(self.drift_lipschitz_x, self.diffusion_lipschitz_x)

    def sigma2_eff(self, x, a):
        return np.asarray(self.diffusion(x, a)) ** 2 + self.eta**2

    def box_samples(self, per_axis: int = 201) -> np.ndarray:
        """Dense control samples over the box (endpoints and 0 included), shape (N, k)."""
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            pts = np.linspace(lo, hi, per_axis if hi > lo else 1)
            if lo < 0 < hi:
                pts = np.append(pts, 0.0)
            axes.append(np.unique(pts))
        grid = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grid], axis=-1)

    def coefficient_bounds(self, x: float | None = None) -> tuple[float, float, float]:
        """(max |drift|, max effective sigma^2, min effective sigma^2) over the box."""
        x = self.x0 if x is None else x
        a = self.box_samples()
        if self.quadratic is not None:
            extra = _quadratic_critical_points(self.quadratic, self.lower[0], self.upper[0])
            a = np.concatenate([a, extra[:, None]])
        mu = np.asarray(self.drift(x, a)) * np.ones(len(a))
        s2 = self.sigma2_eff(x, a) * np.ones(len(a))
        return float(np.abs(mu).max()), float(s2.max()), float(s2.min())

    def is_uniformly_parabolic(self) -> bool:
        return self.coefficient_bounds()[2] > 0.0


def _quadratic_critical_points(q: QuadraticCoefficients, lo: float, hi: float) -> np.ndarray:
    pts = [lo, hi]
    for c1, c2 in ((q.d1, q.d2), (q.s1, q.s2)):
        if c2 != 0.0:
            pts.append(-c1 / (2.0 * c2))
    pts = np.clip(np.array(pts, dtype=float), lo, hi)
    return pts


def portfolio_model(params: MarketParams, T: float, eta: float = 0.0, x0: float = 0.0) -> SdeModel:
    """Log-wealth of a constantly rebalanced portfolio with leverage vector a.

    drift(a) = r + a.(mu - r) - a'Sigma a / 2,  diffusion(a) = sqrt(a'Sigma a).
    """
    mu_ex = params.mu - params.r
    Sig = params.Sigma
    root = params.sqrt_Sigma

    def drift(x, a):
        a = np.asarray(a, dtype=float)
        quad = np.einsum("...i,ij,...j->...", a, Sig, a)
        return params.r + a @ mu_ex - 0.5 * quad + 0.0 * np.asarray(x, dtype=float)

    def diffusion(x, a):
        a = np.asarray(a, dtype=float)
        quad = np.einsum("...i,ij,...j->...", a, Sig, a)
        return np.sqrt(np.maximum(quad, 0.0)) + 0.0 * np.asarray(x, dtype=float)

    def loading(x, a):
        return np.asarray(a, dtype=float) @ root

    quadratic = None
    if params.k == 1:
        s = float(Sig[0, 0])
        quadratic = QuadraticCoefficients(params.r, float(mu_ex[0]), -0.5 * s, 0.0, 0.0, s)
    return SdeModel(drift, diffusion, params.lower, params.upper, x0, T, eta,
                    CostMap.negate(), 0.0, 0.0, quadratic, loading, params)


def perturb(model: SdeModel, eta: float) -> SdeModel:
    """Same model with the extra independent diffusion ``eta``."""
    if eta < 0:
        raise ModelError(f"eta must be nonnegative, got {eta}")
    return replace(model, eta=float(eta))
