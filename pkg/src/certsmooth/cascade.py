"""Cascaded randomized smoothing: the multi-scale predict-or-abstain pipeline.

Stages run from the largest scale sigma_K downward.  A stage halts the
cascade when its lower-bounded smoothed confidence clears the threshold
``p0``; otherwise the next smaller scale is tried, and the pipeline
abstains when the smallest scale also fails.  A halted prediction at stage
k is certified for the radius

    R = max(0, min( sigma_k * (Phi^-1(p_low) - Phi^-1(p0)),
                    min_{y != yhat, k' > k} sigma_k' * Phi^-1(1 - p_up[k', y]) ))

where p_low lower-bounds the halting confidence and p_up[k', y] upper-bound
every competitor confidence at the already-executed larger scales.  The
later-stage terms guarantee those stages keep abstaining (or agreeing)
throughout the certified ball; when an upper bound reaches 0.5 the
certification degenerates and the radius clamps to 0 while the prediction
stands.

Statistical estimation follows the single-scale procedure per stage:
Clopper-Pearson for the halting bound, Goodman simultaneous upper bounds
from the same estimation histogram at every non-halting stage.  The stage
at top-down position j (j = 1 for sigma_K) runs at the Bonferroni-adjusted
level alpha / j, so a cascade that halts after m tests has spent exactly
the adjusted level alpha / m at its halting stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import rng, stats
from .classifiers import exact_confidence_vector
from .smoothing import ABSTAIN, CertificationResult, VoteHistogram, sample_votes

__all__ = ["CascadeConfig", "StageRecord", "CascadeTrace",
           "cascade_predict_certify", "cascade_certify_exact", "cascade_radius"]


@dataclass(frozen=True)
class CascadeConfig:
    """Scales (strictly increasing) and statistical budget of one cascade."""

    sigmas: tuple
    p0: float = 0.5
    alpha: float = 0.001
    n: int = 10_000
    n0: int = 100
    seed: int = 0

    def __post_init__(self):
        sigmas = tuple(float(s) for s in self.sigmas)
        if not sigmas or any(s <= 0 for s in sigmas) or any(
            a >= b for a, b in zip(sigmas, sigmas[1:])
        ):
            raise ValueError("sigmas must be strictly increasing positives")
        if not 0.5 <= self.p0 < 1.0:
            raise ValueError(f"p0 must lie in [0.5, 1), got {self.p0}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n < 1 or self.n0 < 1:
            raise ValueError("n and n0 must be >= 1")
        object.__setattr__(self, "sigmas", sigmas)


@dataclass(frozen=True)
class StageRecord:
    """One executed stage, recorded top-down."""

    sigma: float
    alpha: float           # Bonferroni-adjusted level this stage ran at
    histogram: VoteHistogram
    guess: int
    p_lower: float
    decision: str          # "halt" | "proceed" | "abstain"
    goodman_upper: np.ndarray | None = None


@dataclass(frozen=True)
class CascadeTrace:
    """Full audit record of one cascaded certification."""

    stages: tuple
    prediction: int
    radius: float
    halt_index: int | None   # 1-based index into config.sigmas, None if abstained
    sample_id: int
    config: CascadeConfig

    @property
    def abstained(self) -> bool:
        return self.prediction == ABSTAIN

    @property
    def halt_sigma(self) -> float | None:
        return None if self.halt_index is None else self.config.sigmas[self.halt_index - 1]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "prediction": "ABSTAIN" if self.abstained else int(self.prediction),
            "radius": self.radius,
            "halt_index": self.halt_index,
            "halt_sigma": self.halt_sigma,
            "sample_id": self.sample_id,
            "sigmas": list(self.config.sigmas),
            "p0": self.config.p0,
            "alpha": self.config.alpha,
            "n": self.config.n,
            "n0": self.config.n0,
            "seed": self.config.seed,
            "stages": [
                {
                    "sigma": s.sigma,
                    "alpha": s.alpha,
                    "counts": s.histogram.counts.tolist(),
                    "guess": int(s.guess),
                    "p_lower": s.p_lower,
                    "decision": s.decision,
                    "goodman_upper": None if s.goodman_upper is None
                    else s.goodman_upper.tolist(),
                }
                for s in self.stages
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def cascade_radius(sigma_halt: float, p_lower: float, p0: float,
                   later: list[tuple[float, np.ndarray]], prediction: int) -> float:
    """Certified radius of a halted cascade, clamped at zero.

    ``later`` holds (sigma, per-class upper bounds) for every executed stage
    above the halting one; the prediction's own class is skipped in the
    competitor minimum.
    """
    r = sigma_halt * (
        stats.std_normal_quantile(stats.clamp_probability(p_lower))
        - stats.std_normal_quantile(p0)
    )
    for sigma_k, uppers in later:
        for y, p_up in enumerate(uppers):
            if y == prediction:
                continue
            term = sigma_k * stats.std_normal_quantile(
                1.0 - stats.clamp_probability(float(p_up))
            )
            r = min(r, term)
    return max(r, 0.0)


def cascade_predict_certify(handle, x, config: CascadeConfig, *,
                            sample_id: int = 0) -> CascadeTrace:
    """Run the estimated cascade at ``x`` and certify the halted prediction.

    Statistical failure surfaces as ABSTAIN, never as an exception.  A
    single-stage cascade is exactly the single-scale CERTIFY.
    """
    K = len(config.sigmas)
    records: list[StageRecord] = []
    halt_idx: int | None = None
    prediction = ABSTAIN
    p_low_halt = 0.0
    for pos, i in enumerate(range(K, 0, -1), start=1):  # top-down, alpha / position
        sigma = config.sigmas[i - 1]
        alpha_stage = stats.bonferroni_adjust(config.alpha, pos)
        selection = sample_votes(handle, x, sigma, config.n0, config.seed,
                                 sample_id=sample_id, phase=rng.PHASE_SELECT)
        guess = selection.top_class
        estimation = sample_votes(handle, x, sigma, config.n, config.seed,
                                  sample_id=sample_id, phase=rng.PHASE_ESTIMATE)
        p_lower = stats.clopper_pearson_lower(
            int(estimation.counts[guess]), config.n, alpha_stage
        )
        if p_lower > config.p0:
            decision = "halt"
            halt_idx = i
            prediction = guess
            p_low_halt = p_lower
        else:
            decision = "proceed" if i > 1 else "abstain"
        records.append(StageRecord(sigma, alpha_stage, estimation, guess,
                                   p_lower, decision))
        if decision == "halt":
            break

    if halt_idx is None:
        return CascadeTrace(tuple(records), ABSTAIN, 0.0, None, sample_id, config)

    # Goodman upper bounds for every already-executed (larger-sigma) stage,
    # reusing that stage's estimation histogram at its own adjusted level.
    later: list[tuple[float, np.ndarray]] = []
    finished: list[StageRecord] = []
    for rec in records[:-1]:
        uppers = stats.goodman_upper(rec.histogram.counts, rec.alpha)
        finished.append(StageRecord(rec.sigma, rec.alpha, rec.histogram, rec.guess,
                                    rec.p_lower, rec.decision, uppers))
        later.append((rec.sigma, uppers))
    finished.append(records[-1])

    sigma_halt = config.sigmas[halt_idx - 1]
    radius = cascade_radius(sigma_halt, p_low_halt, config.p0, later, prediction)
    return CascadeTrace(tuple(finished), prediction, radius, halt_idx, sample_id, config)


def cascade_certify_exact(handle, x, sigmas, p0: float = 0.5) -> tuple[int, float]:
    """Idealized cascade on exact smoothed confidences (analytic/tabular only).

    Same control flow with the true confidences in place of statistical
    bounds; serves as the sampling-free verification oracle.  Confidences
    are clamped into [1e-12, 1 - 1e-12] before quantiles, so a degenerate
    p = 1 stage reports the finite sentinel radius sigma * Phi^-1(1 - 1e-12).
    """
    sigmas = [float(s) for s in sigmas]
    if not sigmas or any(s <= 0 for s in sigmas) or any(
        a >= b for a, b in zip(sigmas, sigmas[1:])
    ):
        raise ValueError("sigmas must be strictly increasing positives")
    if not 0.5 <= p0 < 1.0:
        raise ValueError(f"p0 must lie in [0.5, 1), got {p0}")
    K = len(sigmas)
    executed: list[tuple[float, np.ndarray]] = []
    for i in range(K, 0, -1):
        sigma = sigmas[i - 1]
        conf = exact_confidence_vector(handle, x, sigma)
        top = int(np.argmax(conf))
        if conf[top] > p0:
            radius = cascade_radius(sigma, float(conf[top]), p0, executed, top)
            return top, radius
        executed.append((sigma, conf))
    return ABSTAIN, 0.0


def single_stage_equivalent(trace: CascadeTrace) -> CertificationResult:
    """View a K=1 trace as a single-scale certification result."""
    if len(trace.config.sigmas) != 1:
        raise ValueError("only defined for single-stage cascades")
    stage = trace.stages[0]
    return CertificationResult(
        prediction=trace.prediction, radius=trace.radius, p_lower=stage.p_lower,
        sigma=stage.sigma, n=trace.config.n, n0=trace.config.n0,
        alpha=trace.config.alpha, seed=trace.config.seed,
    )
