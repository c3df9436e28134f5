"""Single-scale randomized smoothing: vote collection, CERTIFY and PREDICT.

The smoothed classifier outputs the class most likely under Gaussian input
noise; its confident predictions carry an L2-certified radius.  CERTIFY
guesses the top class from a small selection draw, lower-bounds its true
smoothed confidence from an independent estimation draw with a one-sided
Clopper-Pearson bound, and abstains when the bound does not clear the
decision threshold ``p0``.  With the default ``p0 = 0.5`` the certified
radius reduces to the classic ``sigma * Phi^-1(p_lower)``.

Both draws use disjoint counter-based noise streams (see
:mod:`certsmooth.rng`), so results are deterministic in the seed and
independent of evaluation order or threading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import binomtest

from . import rng, stats
from ._backend import kernels
from .classifiers import ExternalDumpClassifier, GridClassifier, LinearClassifier

__all__ = ["ABSTAIN", "VoteHistogram", "CertificationResult",
           "sample_votes", "certify", "predict"]

# Artificial non-class output for undecidable inputs.
ABSTAIN = -1


@dataclass(frozen=True)
class VoteHistogram:
    """Per-class vote counts from n noisy evaluations at one scale."""

    counts: np.ndarray
    n: int
    sigma: float
    rng_seed: int

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        if counts.min(initial=0) < 0 or int(counts.sum()) != self.n:
            raise ValueError("vote counts must be nonnegative and sum to n")
        object.__setattr__(self, "counts", counts)

    @property
    def top_class(self) -> int:
        return int(np.argmax(self.counts))

    def top_two(self) -> tuple[int, int]:
        order = np.argsort(-self.counts, kind="stable")
        return int(order[0]), int(order[1])


@dataclass(frozen=True)
class CertificationResult:
    """Predict-or-abstain outcome with its certified L2 radius."""

    prediction: int
    radius: float
    p_lower: float
    sigma: float
    n: int
    n0: int
    alpha: float
    seed: int

    @property
    def abstained(self) -> bool:
        return self.prediction == ABSTAIN


def sample_votes(handle, x, sigma: float, n: int, seed: int, *,
                 sample_id: int = 0, phase: int = rng.PHASE_BATCH) -> VoteHistogram:
    """Vote histogram of ``handle`` under N(0, sigma^2 I) noise at ``x``.

    Deterministic given ``(seed, sample_id, phase)``; identical under
    chunked or concurrent evaluation.  External-dump handles answer from
    their ingested prediction records instead of classifying.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(handle, ExternalDumpClassifier):
        labels = handle.lookup(sample_id, sigma, n, seed, phase)
        counts = np.bincount(labels, minlength=handle.num_classes).astype(np.int64)
    elif isinstance(handle, LinearClassifier):
        x = np.ascontiguousarray(x, dtype=np.float64)
        counts = kernels.count_votes_linear(
            seed, sample_id, sigma, phase, x, handle.weights, handle.biases, n
        )
    elif isinstance(handle, GridClassifier):
        x = np.ascontiguousarray(x, dtype=np.float64)
        flat, strides = handle._flat_labels_strides()
        counts = kernels.count_votes_grid(
            seed, sample_id, sigma, phase, x, handle.boundaries, flat, strides,
            handle.num_classes, n,
        )
    else:
        z = kernels.standard_normal_rows(seed, sample_id, sigma, phase, n, handle.dim)
        labels = handle.classify_batch(np.asarray(x, dtype=np.float64) + sigma * z)
        counts = np.bincount(labels, minlength=handle.num_classes).astype(np.int64)
    return VoteHistogram(counts=counts, n=n, sigma=sigma, rng_seed=seed)


def certify(handle, x, sigma: float, n0: int, n: int, alpha: float, seed: int, *,
            p0: float = 0.5, sample_id: int = 0) -> CertificationResult:
    """CERTIFY at one noise scale.

    Guesses the top class from an n0-sample draw, bounds its smoothed
    confidence from an independent n-sample draw, and returns the class
    with radius ``sigma * (Phi^-1(p_lower) - Phi^-1(p0))`` when
    ``p_lower > p0``, else ABSTAIN with radius 0.  The returned class is
    wrong or the radius over-claimed with probability at most ``alpha``.
    """
    if not 0.5 <= p0 < 1.0:
        raise ValueError(f"p0 must lie in [0.5, 1), got {p0}")
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    selection = sample_votes(handle, x, sigma, n0, seed,
                             sample_id=sample_id, phase=rng.PHASE_SELECT)
    guess = selection.top_class
    estimation = sample_votes(handle, x, sigma, n, seed,
                              sample_id=sample_id, phase=rng.PHASE_ESTIMATE)
    p_lower = stats.clopper_pearson_lower(int(estimation.counts[guess]), n, alpha)
    if p_lower > p0:
        radius = sigma * (stats.std_normal_quantile(p_lower) - stats.std_normal_quantile(p0))
        return CertificationResult(guess, radius, p_lower, sigma, n, n0, alpha, seed)
    return CertificationResult(ABSTAIN, 0.0, p_lower, sigma, n, n0, alpha, seed)


def predict(handle, x, sigma: float, n: int, alpha: float, seed: int, *,
            sample_id: int = 0) -> int:
    """Top class when an exact two-sided binomial test of the top-two vote
    counts rejects equality at level ``alpha``; ABSTAIN otherwise."""
    votes = sample_votes(handle, x, sigma, n, seed,
                         sample_id=sample_id, phase=rng.PHASE_PREDICT)
    first, second = votes.top_two()
    k1 = int(votes.counts[first])
    k2 = int(votes.counts[second])
    if binomtest(k1, k1 + k2, 0.5).pvalue > alpha:
        return ABSTAIN
    return first
