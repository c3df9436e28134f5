"""Calibration losses for denoiser fine-tuning, the clean-prior ensemble,
and the over-smoothing / over-confidence error decomposition.

The losses are pure value-plus-gradient functions over soft predictions;
sampling and any training loop live upstream.  Smoothed-classifier errors
split by confidence: an error with smoothed confidence at most ``p0`` is
over-smoothing (noise destroyed the signal), one above ``p0`` is
over-confidence (miscalibration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LossBatchInput", "brier_loss", "anti_consistency_loss",
           "total_objective", "clean_prior_ensemble", "error_decomposition",
           "validate_soft_prediction", "DEFAULT_LAMBDA", "DEFAULT_ALPHA_WEIGHT",
           "DEFAULT_BETA"]

# Default regularizer strengths and prior mixing weight.
DEFAULT_LAMBDA = 0.01
DEFAULT_ALPHA_WEIGHT = 1.0
DEFAULT_BETA = 0.1

_CONF_FLOOR = 1e-12  # smoothed confidences are floored before any log


def validate_soft_prediction(p) -> np.ndarray:
    """Check that p is a distribution over classes (sum 1 within 1e-9)."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("soft prediction must be a 1-D vector over >= 2 classes")
    if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
        raise ValueError("soft prediction must be nonnegative and sum to 1")
    return p


@dataclass(frozen=True)
class LossBatchInput:
    """Per-noise soft predictions of one training sample.

    ``probs`` holds the m noisy soft predictions; the anti-consistency pair
    defaults to its first two rows.
    """

    probs: np.ndarray      # (m, C)
    label: int
    p0: float = 0.5
    pair: np.ndarray | None = None  # (2, C)

    def __post_init__(self):
        probs = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if probs.shape[0] < 1:
            raise ValueError("need at least one noisy prediction")
        for row in probs:
            validate_soft_prediction(row)
        if not 0 <= self.label < probs.shape[1]:
            raise ValueError("label out of range")
        pair = self.pair
        if pair is None and probs.shape[0] >= 2:
            pair = probs[:2]
        if pair is not None:
            pair = np.asarray(pair, dtype=np.float64)
            if pair.shape != (2, probs.shape[1]):
                raise ValueError("pair must hold exactly two soft predictions")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "pair", pair)


def brier_loss(probs, y: int, p0: float = 0.5):
    """Masked squared loss toward the one-hot label, averaged over noise.

    A noisy prediction contributes only when it is correct or unconfident:
    mask = 1 iff argmax p = y or max p <= p0.  Incorrect-yet-confident
    draws are left to the anti-consistency loss.

    Returns ``(value, gradient)`` with gradient[d] = 2 * mask_d * (p_d - e_y) / m.
    """
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    m, C = p.shape
    if not 0 <= y < C:
        raise ValueError("label out of range")
    mask = (np.argmax(p, axis=1) == y) | (p.max(axis=1) <= p0)
    e_y = np.zeros(C)
    e_y[y] = 1.0
    diff = p - e_y
    value = float(np.sum(mask[:, None] * diff ** 2) / m)
    grad = 2.0 * mask[:, None] * diff / m
    return value, grad


def anti_consistency_loss(p1, p2, y: int):
    """Penalty on a pair of noisy predictions agreeing on a wrong class.

    Active iff argmax p1 = argmax p2 != y; the first prediction is held
    fixed through a stop-gradient, so the value is the squared norm of p2
    and grad_p1 is identically zero.

    Returns ``(value, grad_p1, grad_p2)``.
    """
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape or p1.ndim != 1:
        raise ValueError("p1 and p2 must be equal-length vectors")
    if not 0 <= y < p1.size:
        raise ValueError("label out of range")
    y1 = int(np.argmax(p1))
    y2 = int(np.argmax(p2))
    active = y1 == y2 and y1 != y
    if not active:
        return 0.0, np.zeros_like(p1), np.zeros_like(p2)
    return float(np.dot(p2, p2)), np.zeros_like(p1), 2.0 * p2


def total_objective(denoiser_loss: float, brier: float, ac: float,
                    lam: float = DEFAULT_LAMBDA,
                    alpha_w: float = DEFAULT_ALPHA_WEIGHT) -> float:
    """Combined objective: denoiser_loss + lam * (brier + alpha_w * ac)."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    if alpha_w < 0:
        raise ValueError("alpha_w must be nonnegative")
    return float(denoiser_loss + lam * (brier + alpha_w * ac))


def clean_prior_ensemble(clean_logits, smoothed_conf, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Refine clean logits with smoothed confidences as a tempered prior.

    Log-space mixture: softmax(logits + (1-beta) * log p_hat + beta * log(1/C)),
    with confidences floored at 1e-12.  A uniform prior (or beta = 1) leaves
    the clean prediction unchanged.
    """
    logits = np.asarray(clean_logits, dtype=np.float64)
    conf = np.asarray(smoothed_conf, dtype=np.float64)
    if logits.shape != conf.shape or logits.ndim != 1:
        raise ValueError("logits and smoothed confidences must be equal-length vectors")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    C = logits.size
    mix = logits + (1.0 - beta) * np.log(np.maximum(conf, _CONF_FLOOR)) \
        + beta * np.log(1.0 / C)
    mix -= mix.max()
    out = np.exp(mix)
    return out / out.sum()


def error_decomposition(correct, p, p0: float = 0.5) -> tuple[float, float]:
    """Split the error rate by smoothed confidence.

    Returns ``(over_smoothing_rate, over_confidence_rate)``: the fractions
    of records that are wrong with p <= p0 and wrong with p > p0.  The two
    rates sum to the total error rate exactly.
    """
    correct = np.asarray(correct, dtype=bool)
    p = np.asarray(p, dtype=np.float64)
    if correct.shape != p.shape or correct.ndim != 1 or correct.size == 0:
        raise ValueError("need equal-length nonempty record arrays")
    wrong = ~correct
    over_smoothing = float(np.mean(wrong & (p <= p0)))
    over_confidence = float(np.mean(wrong & (p > p0)))
    return over_smoothing, over_confidence
