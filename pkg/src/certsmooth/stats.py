"""Exact-contract statistical primitives used throughout certification.

Four procedures only: the standard normal CDF and quantile, the one-sided
Clopper-Pearson lower confidence bound, simultaneous Goodman upper bounds
for multinomial proportions, and the Bonferroni correction.

All functions are pure and reentrant.

Goodman bounds
--------------
For counts ``(k_1, ..., k_C)`` with ``n = sum(k_c)``, the upper limit for
class ``c`` is the larger root of Goodman's (1965) quadratic with the
per-class Bonferroni-adjusted chi-square quantile ``A = chi2_{1}(1 - alpha/C)``:

    upper_c = (2 k_c + A + sqrt(A^2 + 4 A k_c (n - k_c) / n)) / (2 (n + A))

The simultaneous two-sided intervals have joint coverage >= 1 - alpha, so
the upper limits alone satisfy ``P[forall c: p_c <= upper_c] >= 1 - alpha``.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy import special, stats as sp_stats

__all__ = [
    "std_normal_cdf",
    "std_normal_quantile",
    "clopper_pearson_lower",
    "goodman_upper",
    "bonferroni_adjust",
    "clamp_probability",
    "PROB_EPS",
]

# Confidences are clamped into [PROB_EPS, 1 - PROB_EPS] before any quantile
# is taken of them; keeps radii finite for degenerate (0/1) probabilities.
PROB_EPS = 1e-12

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation to the standard normal quantile
# (abs error ~1.15e-9 on its own; one Newton step below brings it to
# full double precision).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF, absolute error below 1e-15.

    Total on finite reals; raises only for NaN input.
    """
    z = float(z)
    if math.isnan(z):
        raise ValueError("std_normal_cdf requires a finite argument")
    return 0.5 * math.erfc(-z / _SQRT2)


def _quantile_lower_half(p: float) -> float:
    # p in (0, 0.5]; result <= 0.  Rational approximation plus one Newton
    # step through the CDF evaluated in its relative-precision-safe form.
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        z = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q \
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
    err = 0.5 * math.erfc(-z / _SQRT2) - p
    return z - err * _SQRT_2PI * math.exp(0.5 * z * z)


def std_normal_quantile(p: float) -> float:
    """Inverse of the standard normal CDF.

    Strictly increasing on (0, 1); absolute error below 1e-10 across
    (1e-12, 1-1e-12).  ``p`` equal to 0 or 1 is a domain error: callers
    are expected to clamp (see :func:`clamp_probability`).
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise ValueError(f"std_normal_quantile requires 0 < p < 1, got {p}")
    if p <= 0.5:
        return _quantile_lower_half(p)
    # 1 - p is exact for p >= 0.5 (Sterbenz), so the reflected evaluation
    # keeps full precision in the upper tail.
    return -_quantile_lower_half(1.0 - p)


@lru_cache(maxsize=1 << 16)
def _beta_quantile_bisect(a: int, b: int, alpha: float) -> float:
    # alpha-quantile of Beta(a, b) by bisection on the regularized
    # incomplete beta function; interval narrowed below 1e-14.
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if special.betainc(a, b, mid) < alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def clopper_pearson_lower(k: int, n: int, alpha: float) -> float:
    """One-sided Clopper-Pearson lower bound with coverage >= 1 - alpha.

    Uses the beta-quantile characterization: the bound is the alpha-quantile
    of Beta(k, n - k + 1), with k = 0 mapping to the trivial bound 0.
    """
    k = int(k)
    n = int(n)
    if n < 1:
        raise ValueError(f"clopper_pearson_lower requires n >= 1, got {n}")
    if not 0 <= k <= n:
        raise ValueError(f"clopper_pearson_lower requires 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"significance level must lie in (0, 1), got {alpha}")
    if k == 0:
        return 0.0
    return _beta_quantile_bisect(k, n - k + 1, float(alpha))


def goodman_upper(counts, alpha: float) -> np.ndarray:
    """Simultaneous Goodman upper bounds for multinomial class proportions.

    Returns one upper bound per class; jointly ``P[forall c: p_c <= bound_c]
    >= 1 - alpha``.  Bounds never exceed 1 and are positive even for classes
    with zero votes.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size < 2:
        raise ValueError("goodman_upper requires counts for at least 2 classes")
    if np.any(counts < 0):
        raise ValueError("goodman_upper requires nonnegative counts")
    n = counts.sum()
    if n < 1:
        raise ValueError("goodman_upper requires at least one observation")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"significance level must lie in (0, 1), got {alpha}")
    a = sp_stats.chi2.ppf(1.0 - alpha / counts.size, df=1)
    disc = a * a + 4.0 * a * counts * (n - counts) / n
    upper = (2.0 * counts + a + np.sqrt(disc)) / (2.0 * (n + a))
    return np.minimum(upper, 1.0)


def bonferroni_adjust(alpha: float, tests: int) -> float:
    """Bonferroni-corrected per-test significance level: alpha / tests."""
    if tests < 1:
        raise ValueError(f"bonferroni_adjust requires tests >= 1, got {tests}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"significance level must lie in (0, 1), got {alpha}")
    return alpha / tests


def clamp_probability(p: float) -> float:
    """Clamp a probability into [PROB_EPS, 1 - PROB_EPS] for quantile use."""
    return min(max(float(p), PROB_EPS), 1.0 - PROB_EPS)
