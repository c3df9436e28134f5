"""Alternative multi-scale aggregation policies: max-radius and focal smoothing.

The max-radius policy picks, among K smoothed classifiers, the scale
maximizing ``sigma_i * Phi^-1(p_i)`` and certifies a halved-margin radius
against the best competitor across all scales.

Focal smoothing aggregates K binary smoothed classifiers built from
orthogonal two-level noise masks (scale sigma1 inside the mask, sigma0 > sigma1
outside).  Its certified radius is the minimum over budget allocations b on
the simplex of

    R_b = (1/K) * sum_k a_k / sqrt(t^2 b_k + 1),
    a_k = sigma0 * Phi^-1(p_k),   t^2 = sigma0^2 / sigma1^2 - 1,

solved by a one-dimensional grid search over the shared budget of the
maximal-coefficient index set: all indices attaining max a share one
budget value, and the remaining coordinates are either zero (when
``a_k <= a_max / (t^2 b_m + 1)^{3/2}``) or pinned by the stationarity
formula ``((a_k / a_max)^{2/3} (t^2 b_m + 1) - 1) / t^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import stats
from .smoothing import ABSTAIN

__all__ = ["FocalInstance", "FocalSolution", "FocalCertification", "FocalMaskSet",
           "NoFeasibleGridPointError", "max_radius_policy", "focal_radius",
           "focal_optimize", "focal_certify"]


class NoFeasibleGridPointError(RuntimeError):
    """No grid allocation met the simplex tolerance (tol too tight for grid_step)."""


def max_radius_policy(confidences, sigmas) -> tuple[int, float]:
    """Prediction and halved-margin radius of the max-radius policy.

    ``confidences[i][c]`` is the (possibly bounded) smoothed confidence of
    class c at scale ``sigmas[i]``.  Abstains (radius 0) when the winning
    scale's top confidence does not exceed 0.5.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if conf.ndim != 2 or conf.shape[0] != sigmas.size:
        raise ValueError("confidences must be (K, C) aligned with sigmas")
    if sigmas.size == 0 or np.any(sigmas <= 0) or np.any(np.diff(sigmas) <= 0):
        raise ValueError("sigmas must be strictly increasing positives")
    # Rows of exact confidences sum to 1; rows of statistical upper bounds
    # may legitimately sum above it, so only entries are range-checked.
    if np.any(conf < 0) or np.any(conf > 1.0):
        raise ValueError("confidences must lie in [0, 1]")

    clamped = np.clip(conf, stats.PROB_EPS, 1.0 - stats.PROB_EPS)
    quant = np.vectorize(stats.std_normal_quantile)(clamped)
    top_per_scale = np.argmax(conf, axis=1)
    scores = sigmas * quant[np.arange(sigmas.size), top_per_scale]
    star = int(np.argmax(scores))
    prediction = int(top_per_scale[star])
    if conf[star, prediction] <= 0.5:
        return ABSTAIN, 0.0
    competitor = (sigmas[:, None] * quant).copy()
    competitor[:, prediction] = -np.inf
    radius = 0.5 * (scores[star] - competitor.max())
    return prediction, max(radius, 0.0)


@dataclass(frozen=True)
class FocalInstance:
    """Inputs of the focal budget optimization."""

    a: np.ndarray
    t_sq: float
    sigma0: float
    sigma1: float

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.float64)
        if a.ndim != 1 or a.size < 1 or not np.all(np.isfinite(a)) or np.any(a < 0):
            raise ValueError("a must be finite nonnegative values, one per mask")
        if self.t_sq <= 0:
            raise ValueError("t_sq must be positive")
        object.__setattr__(self, "a", a)

    @property
    def K(self) -> int:
        return self.a.size

    @classmethod
    def from_confidences(cls, p_masks, sigma0: float, sigma1: float) -> "FocalInstance":
        """Build an instance from per-mask confidences: a_k = sigma0 * Phi^-1(p_k),
        clamped at 0 for p_k <= 0.5 (no certifiable budget from weak masks)."""
        if not sigma0 > sigma1 > 0:
            raise ValueError("need sigma0 > sigma1 > 0")
        p = np.asarray(p_masks, dtype=np.float64)
        a = np.array([
            max(0.0, sigma0 * stats.std_normal_quantile(stats.clamp_probability(pk)))
            for pk in p
        ])
        return cls(a=a, t_sq=sigma0 ** 2 / sigma1 ** 2 - 1.0, sigma0=sigma0, sigma1=sigma1)


@dataclass(frozen=True)
class FocalSolution:
    """Budget allocation on the simplex and the radius it attains."""

    b: np.ndarray
    radius: float

    def __post_init__(self):
        b = np.ascontiguousarray(self.b, dtype=np.float64)
        if abs(float(b.sum()) - 1.0) > 1e-9 or np.any(b < 0):
            raise ValueError("b must lie on the probability simplex")
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class FocalMaskSet:
    """K binary masks over d coordinates with pairwise disjoint supports."""

    masks: np.ndarray  # (K, d) in {0, 1}

    def __post_init__(self):
        m = np.ascontiguousarray(self.masks, dtype=np.int8)
        if m.ndim != 2 or m.size == 0:
            raise ValueError("masks must be a (K, d) binary matrix")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("masks must be binary")
        if np.any(m.sum(axis=0) > 1):
            raise ValueError("mask supports must be pairwise disjoint")
        object.__setattr__(self, "masks", m)

    @property
    def K(self) -> int:
        return self.masks.shape[0]

    def noise_scale(self, k: int, sigma0: float, sigma1: float) -> np.ndarray:
        """Per-coordinate noise scale sigma0*(1-M_k) + sigma1*M_k."""
        m = self.masks[k].astype(np.float64)
        return sigma0 * (1.0 - m) + sigma1 * m


def focal_radius(b, inst: FocalInstance) -> float:
    """The focal objective R_b at a simplex allocation."""
    b = np.asarray(b, dtype=np.float64)
    if b.shape != inst.a.shape:
        raise ValueError("b must have one entry per mask")
    return float(np.mean(inst.a / np.sqrt(inst.t_sq * b + 1.0)))


def focal_optimize(inst: FocalInstance, grid_step: float = 1e-4,
                   tol: float = 5e-4) -> FocalSolution:
    """Minimize R_b over the simplex by the shared-budget grid search.

    Grid candidates whose coordinate sum misses 1 by more than ``tol`` are
    rejected; accepted candidates absorb the residual into the (equal)
    maximal-set budgets so the returned allocation sums to 1 exactly.
    Ties in the objective resolve to the smallest shared budget.
    """
    if not 0.0 < grid_step <= 0.1:
        raise ValueError("grid_step must lie in (0, 0.1]")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    a, t2, K = inst.a, inst.t_sq, inst.K
    a_max = float(a.max())
    in_max = a == a_max
    m_count = int(in_max.sum())

    steps = int(round(1.0 / grid_step))
    bm = np.arange(1, steps + 1, dtype=np.float64) * grid_step
    scale = t2 * bm + 1.0                     # (G,)
    B = np.zeros((bm.size, K))
    B[:, in_max] = bm[:, None]
    for k in np.flatnonzero(~in_max):
        zero = a[k] <= a_max / scale ** 1.5 if a_max > 0 else np.ones_like(bm, bool)
        alloc = ((a[k] / a_max) ** (2.0 / 3.0) * scale - 1.0) / t2 if a_max > 0 else 0.0
        B[:, k] = np.where(zero, 0.0, alloc)

    resid = B.sum(axis=1) - 1.0
    feasible = np.abs(resid) <= tol
    if not feasible.any():
        raise NoFeasibleGridPointError(
            f"no grid point within tol={tol} of the simplex (grid_step={grid_step})"
        )
    Bf = B[feasible]
    Bf[:, in_max] -= (resid[feasible] / m_count)[:, None]
    radii = (a / np.sqrt(t2 * Bf + 1.0)).sum(axis=1) / K
    best = int(np.argmin(radii))              # first minimum = smallest b_m
    b = Bf[best]
    return FocalSolution(b=b, radius=float(radii[best]))


@dataclass(frozen=True)
class FocalCertification:
    """Outcome of certifying one input through focal smoothing."""

    radius: float
    solution: FocalSolution | None
    abstained: bool
    p_hat: float


def focal_certify(p_masks, sigma0: float, sigma1: float, alpha: float | None = None,
                  n: int | None = None, *, grid_step: float = 1e-4,
                  tol: float = 5e-4) -> FocalCertification:
    """Certify from per-mask confidences; radius 0 unless mean confidence > 0.5.

    When ``n`` is given the confidences are treated as vote fractions of
    n draws and each is lower-bounded by a Clopper-Pearson bound at the
    Bonferroni-adjusted level alpha / K before optimization.
    """
    p = np.asarray(p_masks, dtype=np.float64)
    if n is not None:
        if alpha is None:
            raise ValueError("alpha is required when n is given")
        level = stats.bonferroni_adjust(alpha, p.size)
        p = np.array([
            stats.clopper_pearson_lower(int(round(pk * n)), n, level) for pk in p
        ])
    p_hat = float(p.mean())
    if not p_hat > 0.5:
        return FocalCertification(radius=0.0, solution=None, abstained=True, p_hat=p_hat)
    inst = FocalInstance.from_confidences(p, sigma0, sigma1)
    sol = focal_optimize(inst, grid_step=grid_step, tol=tol)
    return FocalCertification(radius=sol.radius, solution=sol, abstained=False, p_hat=p_hat)
