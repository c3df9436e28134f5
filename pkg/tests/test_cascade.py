"""Cascaded certification: control flow, the multi-scale radius, reductions."""

import json

import numpy as np
import pytest

from certsmooth import (
    ABSTAIN,
    CascadeConfig,
    GridClassifier,
    LinearClassifier,
    cascade_certify_exact,
    cascade_predict_certify,
    certify,
)
from certsmooth.cascade import cascade_radius
from certsmooth.classifiers import exact_confidence_batch, exact_confidence_vector

# frozen quantile-table values (mpmath, 40 digits)
R_WORKED_EQ6 = 0.3203878913861501     # min(0.25*Q(0.9), 0.5*Q(0.8))
R_LATER_BINDS = 0.1266735515678999    # min(0.25*Q(0.95), 0.5*Q(0.6))
Q_1M1E12 = 7.034486910047835          # Q(double nearest 1 - 1e-12), the clamp sentinel


def binary_linear():
    return LinearClassifier(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))


def quadrant_grid():
    return GridClassifier((np.array([0.0]), np.array([0.0])),
                          np.array([[2, 1], [3, 0]]), 4)


def constant_classifier():
    return LinearClassifier(np.zeros((3, 2)), np.array([0.0, 1.0, 0.0]))


class TestCascadeRadius:
    def test_worked_value(self):
        # halting bound 0.9 at sigma 0.25, competitor uppers 0.2 at sigma 0.5
        r = cascade_radius(0.25, 0.9, 0.5, [(0.5, np.array([0.9, 0.2]))], prediction=0)
        assert abs(r - R_WORKED_EQ6) < 1e-5

    def test_later_stage_term_binds(self):
        r = cascade_radius(0.25, 0.95, 0.5, [(0.5, np.array([0.2, 0.4, 0.35]))],
                           prediction=0)
        assert abs(r - R_LATER_BINDS) < 1e-5

    def test_clamped_at_zero_when_upper_crosses_half(self):
        r = cascade_radius(0.25, 0.9, 0.5, [(0.5, np.array([0.1, 0.6]))], prediction=0)
        assert r == 0.0

    def test_no_later_stages_is_single_scale(self):
        from certsmooth.stats import std_normal_quantile

        r = cascade_radius(0.5, 0.84, 0.5, [], prediction=1)
        assert abs(r - 0.5 * std_normal_quantile(0.84)) < 1e-12


class TestSingleStageReduction:
    def test_matches_certify_bitwise(self):
        from certsmooth.cascade import single_stage_equivalent

        h = binary_linear()
        for seed, margin in ((0, 0.9), (1, 0.2), (2, 0.02)):
            x = np.array([margin, -0.3])
            config = CascadeConfig(sigmas=(0.25,), alpha=0.001, n=2000, n0=100,
                                   seed=seed)
            trace = cascade_predict_certify(h, x, config, sample_id=seed)
            res = certify(h, x, 0.25, 100, 2000, 0.001, seed=seed, sample_id=seed)
            assert trace.prediction == res.prediction
            assert abs(trace.radius - res.radius) <= 1e-12
            assert single_stage_equivalent(trace) == res


class TestExactCascade:
    def test_margin_point_abstains_everywhere(self):
        pred, radius = cascade_certify_exact(binary_linear(), np.zeros(2),
                                             (0.25, 0.5))
        assert pred == ABSTAIN and radius == 0.0

    def test_constant_classifier_sentinel(self):
        pred, radius = cascade_certify_exact(constant_classifier(), np.zeros(2),
                                             (0.25, 0.5))
        assert pred == 1
        assert abs(radius - 0.5 * Q_1M1E12) < 1e-6

    def test_proceeds_then_halts_downstream(self):
        # quadrant point: over-smoothed at sigma 1.0, confident at 0.25
        h = quadrant_grid()
        x = np.array([0.45, 0.45])
        top_hi = exact_confidence_vector(h, x, 1.0).max()
        top_lo = exact_confidence_vector(h, x, 0.25).max()
        assert top_hi <= 0.5 < top_lo
        pred, radius = cascade_certify_exact(h, x, (0.25, 1.0))
        assert pred == 0 and radius > 0.0

    def test_strict_threshold_boundary(self):
        # exact p = p0 at the top scale must proceed, not halt
        pred, radius = cascade_certify_exact(binary_linear(), np.zeros(2),
                                             (0.25, 0.5), p0=0.5)
        assert pred == ABSTAIN  # every stage sits exactly at p0

    def test_grid_search_never_flips_certified_decision(self):
        # light version of the acceptance sweep
        rng = np.random.default_rng(44)
        h = quadrant_grid()
        sigmas = (0.25, 0.5, 1.0)
        checked = 0
        for _ in range(20):
            x = rng.uniform(0.1, 1.8, size=2) * rng.choice([-1, 1], size=2)
            y, radius = cascade_certify_exact(h, x, sigmas)
            if y == ABSTAIN or radius <= 1e-6:
                continue
            checked += 1
            angles = np.linspace(0, 2 * np.pi, 73)[:-1]
            deltas = (radius - 1e-6) * np.column_stack([np.cos(angles), np.sin(angles)])
            for delta in deltas:
                y2, _ = cascade_certify_exact(h, x + delta, sigmas)
                assert y2 == y
        assert checked >= 5


class TestEstimatedCascade:
    def config(self, **kw):
        base = dict(sigmas=(0.25, 0.5, 1.0), p0=0.5, alpha=0.001, n=1000,
                    n0=100, seed=12)
        base.update(kw)
        return CascadeConfig(**base)

    def test_statistical_failure_is_abstain_not_exception(self):
        trace = cascade_predict_certify(binary_linear(), np.zeros(2), self.config())
        assert trace.abstained
        assert trace.radius == 0.0
        assert trace.halt_index is None
        assert [s.decision for s in trace.stages] == ["proceed", "proceed", "abstain"]

    def test_halting_at_lower_stage_collects_goodman_bounds(self):
        h = quadrant_grid()
        x = np.array([0.45, 0.45])
        trace = cascade_predict_certify(h, x, self.config(), sample_id=5)
        assert trace.prediction == 0
        assert trace.halt_sigma in (0.25, 0.5)
        finished = [s for s in trace.stages if s.decision == "proceed"]
        assert finished and all(s.goodman_upper is not None for s in finished)
        assert all(s.goodman_upper.shape == (4,) for s in finished)
        # radius never exceeds the halting stage's own single-scale radius
        from certsmooth.stats import std_normal_quantile

        halt = trace.stages[-1]
        own = trace.halt_sigma * (std_normal_quantile(halt.p_lower)
                                  - std_normal_quantile(0.5))
        assert trace.radius <= own + 1e-12

    def test_stage_alphas_follow_position(self):
        trace = cascade_predict_certify(binary_linear(), np.zeros(2), self.config())
        assert [s.alpha for s in trace.stages] == [0.001, 0.001 / 2, 0.001 / 3]
        # audit: the product of executed-stage budgets never exceeds alpha
        product = np.prod([s.alpha for s in trace.stages])
        assert product <= 0.001 + 1e-15

    def test_monotone_abstention_in_p0(self):
        h = quadrant_grid()
        rng = np.random.default_rng(2)
        for sample_id in range(40):
            x = rng.uniform(-1.5, 1.5, size=2)
            abstained_before = False
            for p0 in (0.5, 0.6, 0.7, 0.8, 0.9):
                trace = cascade_predict_certify(h, x, self.config(p0=p0),
                                                sample_id=sample_id)
                if abstained_before:
                    assert trace.abstained
                abstained_before = trace.abstained

    def test_determinism(self):
        h = quadrant_grid()
        x = np.array([0.4, 0.7])
        a = cascade_predict_certify(h, x, self.config(), sample_id=3)
        b = cascade_predict_certify(h, x, self.config(), sample_id=3)
        assert a.prediction == b.prediction and a.radius == b.radius
        assert all(
            np.array_equal(sa.histogram.counts, sb.histogram.counts)
            for sa, sb in zip(a.stages, b.stages)
        )

    def test_radius_recomputable_from_recorded_bounds(self):
        # the trace is a complete audit record: recorded p_lower and Goodman
        # uppers reproduce the returned radius through the radius formula
        h = quadrant_grid()
        for sample_id, x in ((1, np.array([0.45, 0.45])),
                             (2, np.array([1.9, 1.9])),
                             (3, np.array([-0.6, 0.7]))):
            trace = cascade_predict_certify(h, x, self.config(), sample_id=sample_id)
            if trace.abstained:
                continue
            later = [(s.sigma, s.goodman_upper) for s in trace.stages
                     if s.goodman_upper is not None]
            recomputed = cascade_radius(trace.halt_sigma, trace.stages[-1].p_lower,
                                        0.5, later, trace.prediction)
            assert recomputed == trace.radius

    def test_trace_json_schema(self):
        h = quadrant_grid()
        trace = cascade_predict_certify(h, np.array([0.45, 0.45]), self.config(),
                                        sample_id=1)
        doc = json.loads(trace.to_json())
        assert doc["schema_version"] == 1
        assert doc["sigmas"] == [0.25, 0.5, 1.0]
        assert doc["halt_sigma"] == trace.halt_sigma
        assert len(doc["stages"]) == len(trace.stages)
        for stage in doc["stages"]:
            assert {"sigma", "alpha", "counts", "guess", "p_lower", "decision",
                    "goodman_upper"} <= stage.keys()

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            CascadeConfig(sigmas=(0.5, 0.25))
        with pytest.raises(ValueError):
            CascadeConfig(sigmas=(), p0=0.5)
        with pytest.raises(ValueError):
            CascadeConfig(sigmas=(0.25,), p0=0.4)


class TestExactAgainstEstimated:
    def test_estimated_certificates_hold_on_exact_pipeline(self):
        # when the estimated cascade certifies (yhat, R), the exact cascade
        # must output yhat everywhere inside the ball, up to the alpha budget
        h = quadrant_grid()
        rng = np.random.default_rng(10)
        sigmas = (0.25, 0.5, 1.0)
        angles = np.linspace(0, 2 * np.pi, 37)[:-1]
        failures = total = 0
        for sample_id in range(120):
            x = rng.uniform(0.15, 1.9, size=2)
            config = CascadeConfig(sigmas=sigmas, alpha=0.001, n=1000, n0=100,
                                   seed=sample_id)
            trace = cascade_predict_certify(h, x, config, sample_id=sample_id)
            if trace.abstained or trace.radius <= 1e-6:
                continue
            total += 1
            deltas = (trace.radius - 1e-6) * np.column_stack(
                [np.cos(angles), np.sin(angles)]
            )
            decisions = {cascade_certify_exact(h, x + d, sigmas)[0] for d in deltas}
            decisions.add(cascade_certify_exact(h, x, sigmas)[0])
            if decisions != {trace.prediction}:
                failures += 1
        assert total > 60
        assert failures / total <= 0.01


def test_batch_confidences_match_vector():
    h = quadrant_grid()
    pts = np.random.default_rng(1).uniform(-2, 2, size=(50, 2))
    batch = exact_confidence_batch(h, pts, 0.5)
    for i in range(len(pts)):
        assert np.allclose(batch[i], exact_confidence_vector(h, pts[i], 0.5),
                           atol=1e-12)
