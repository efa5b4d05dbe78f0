"""Random-effects fitting and empirical Bayes shrinkage.

The model is y_j ~ N(mu, tau^2 + v_j) with known sampling variances v_j.
Hyperparameters come from restricted maximum likelihood (profile form in
tau^2, mean profiled out as the precision-weighted average), with a plain
maximum-likelihood fallback when the optimizer fails.  Shrinkage pulls an
estimate toward the fitted center with weight B = tau^2 / (tau^2 + v).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

TAU2_FLOOR = 1e-10
_MAX_ITER = 200
_XATOL = 1e-10
_COARSE_POINTS = 33


@dataclass(frozen=True)
class RandomEffectsFit:
    mu_hat: float
    tau2_hat: float
    method_used: str  # "reml" or "ml-fallback"
    n_obs: int

    def __post_init__(self):
        if self.tau2_hat < TAU2_FLOOR:
            raise ValueError("tau2_hat below clip floor")
        if not math.isfinite(self.mu_hat):
            raise ValueError("non-finite mu_hat")


@dataclass(frozen=True)
class ShrinkageResult:
    """theta_tilde = (1 - B) * center + B * y with B = tau2 / (tau2 + v)."""

    theta_tilde: float
    B: float
    center: float
    y: float
    v: float


def _weighted_center(y: np.ndarray, v: np.ndarray, tau2: float) -> float:
    w = 1.0 / (v + tau2)
    return float((w @ y) / w.sum())


def _neg_restricted_ll(tau2, y: np.ndarray, v: np.ndarray) -> np.ndarray | float:
    """Vectorized over tau2 when given an array (used by the coarse scan)."""
    tau2 = np.asarray(tau2, dtype=float)
    total = v + (tau2[..., None] if tau2.ndim else tau2)
    w = 1.0 / total
    sw = w.sum(axis=-1)
    mu = (w * y).sum(axis=-1) / sw
    resid = y - (mu[..., None] if tau2.ndim else mu)
    quad = (w * resid * resid).sum(axis=-1)
    out = np.log(total).sum(axis=-1) + np.log(sw) + quad
    return out if tau2.ndim else float(out)


def _neg_ml_ll(tau2, y: np.ndarray, v: np.ndarray) -> np.ndarray | float:
    tau2 = np.asarray(tau2, dtype=float)
    total = v + (tau2[..., None] if tau2.ndim else tau2)
    w = 1.0 / total
    mu = (w * y).sum(axis=-1) / w.sum(axis=-1)
    resid = y - (mu[..., None] if tau2.ndim else mu)
    quad = (w * resid * resid).sum(axis=-1)
    out = np.log(total).sum(axis=-1) + quad
    return out if tau2.ndim else float(out)


def fit_random_effects(
    y: Sequence[float], v: Sequence[float], method: str = "reml"
) -> RandomEffectsFit:
    """Fit (mu, tau^2) for the one-way random-effects model.

    Parameters
    ----------
    y, v : sequences of effect estimates and their positive sampling variances.
    method : "reml" (default) or "ml".

    The search is a bounded derivative-free minimization of the profile
    objective in tau^2 on [0, 10 * max_j (y_j - ybar)^2]; tau^2 is clipped at
    1e-10, and mu is the precision-weighted mean at the fitted tau^2.  If the
    REML optimizer does not converge within 200 iterations (or the objective
    is non-finite), the fit falls back to ML and says so in ``method_used``.
    """
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    if y.ndim != 1 or y.shape != v.shape:
        raise ValueError("y and v must be 1-D and aligned")
    if y.size < 2:
        raise ValueError(f"need at least 2 observations, got {y.size}")
    if not (np.isfinite(y).all() and np.isfinite(v).all()):
        raise ValueError("non-finite inputs")
    if (v <= 0).any():
        raise ValueError("all sampling variances must be positive")
    if method not in ("reml", "ml"):
        raise ValueError(f"unknown method {method!r}")

    upper = 10.0 * float(np.max((y - y.mean()) ** 2))
    upper = max(upper, 1e-8)

    def solve(objective):
        # coarse global scan guards against local basins, then a bounded
        # derivative-free search refines within the best bracket
        grid = np.linspace(0.0, upper, _COARSE_POINTS)
        best = int(np.argmin(objective(grid, y, v)))
        lo = grid[max(best - 1, 0)]
        hi = grid[min(best + 1, grid.size - 1)]
        res = minimize_scalar(
            objective,
            bounds=(lo, hi),
            args=(y, v),
            method="bounded",
            options={"maxiter": _MAX_ITER, "xatol": _XATOL},
        )
        ok = bool(res.success) and math.isfinite(res.fun)
        x = res.x if res.fun <= objective(grid[best], y, v) else grid[best]
        return x, ok

    if method == "ml":
        tau2, _ = solve(_neg_ml_ll)
        used = "ml-fallback"
    else:
        tau2, ok = solve(_neg_restricted_ll)
        used = "reml"
        if not ok:
            tau2, _ = solve(_neg_ml_ll)
            used = "ml-fallback"

    tau2 = max(float(tau2), TAU2_FLOOR)
    mu = _weighted_center(y, v, tau2)
    return RandomEffectsFit(mu_hat=mu, tau2_hat=tau2, method_used=used, n_obs=y.size)


def shrinkage_weight(tau2: float, v: float) -> float:
    """B = tau2 / (tau2 + v); increasing in tau2, decreasing in v."""
    if v <= 0:
        raise ValueError("v must be positive")
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    return tau2 / (tau2 + v)


def shrink(y: float, v: float, fit: RandomEffectsFit) -> ShrinkageResult:
    """Pull (y, v) toward the fitted center."""
    b = shrinkage_weight(fit.tau2_hat, v)
    return ShrinkageResult(
        theta_tilde=(1.0 - b) * fit.mu_hat + b * y,
        B=b,
        center=fit.mu_hat,
        y=y,
        v=v,
    )


def classical_eb(
    pairs: Sequence[tuple[float, float]], method: str = "reml"
) -> list[ShrinkageResult]:
    """Classical (global) EB: one pooled fit shared by every experiment."""
    if len(pairs) < 2:
        raise ValueError("classical EB needs at least 2 experiments")
    y = [p[0] for p in pairs]
    v = [p[1] for p in pairs]
    fit = fit_random_effects(y, v, method=method)
    return [shrink(yk, vk, fit) for yk, vk in pairs]


@dataclass(frozen=True)
class MixturePriorSpec:
    """Finite Gaussian-mixture prior over latent experiment types.

    ``weights[z]`` is the type probability, ``means[z]`` / ``tau2s[z]`` the
    per-type effect prior N(mean, tau2).  ``feature_informativeness`` is the
    probability that the observable feature reveals the latent type; with the
    complementary probability the feature is an independent draw from the
    type distribution, which keeps the local oracle center analytic.
    """

    weights: tuple[float, ...]
    means: tuple[float, ...]
    tau2s: tuple[float, ...]
    feature_informativeness: float = 1.0

    def __post_init__(self):
        k = len(self.weights)
        if not (len(self.means) == len(self.tau2s) == k) or k == 0:
            raise ValueError("weights, means, tau2s must be non-empty and aligned")
        if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if any(t < 0 for t in self.tau2s):
            raise ValueError("tau2s must be non-negative")
        if not 0.0 <= self.feature_informativeness <= 1.0:
            raise ValueError("feature_informativeness must be in [0, 1]")

    @property
    def n_types(self) -> int:
        return len(self.weights)

    def mixture_mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def var_of_type_means(self) -> float:
        mu = self.mixture_mean()
        return float(np.dot(self.weights, (np.asarray(self.means) - mu) ** 2))

    def tau2_max(self) -> float:
        return float(max(self.tau2s))

    def local_centers(self) -> np.ndarray:
        """E[type mean | feature = z] for each feature value z."""
        p = self.feature_informativeness
        mu_mix = self.mixture_mean()
        return p * np.asarray(self.means) + (1.0 - p) * mu_mix

    def var_of_local_center(self) -> float:
        """Var over features of the local center: p^2 * Var(type means)."""
        p = self.feature_informativeness
        return p * p * self.var_of_type_means()
