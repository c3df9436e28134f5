"""Metrics, synthetic data, critical-sigma scan, and batch runs."""

import json
import math

import numpy as np
import pytest

from certsmooth import ABSTAIN, GridClassifier, LinearClassifier
from certsmooth import harness
from certsmooth.harness import EvalRecord, RunConfig


def rec(sample_id, true_label, prediction, radius, p=0.7):
    return EvalRecord(sample_id=sample_id, true_label=true_label,
                      prediction=prediction, radius=radius, halt_sigma=None,
                      p_lower=p, seed=0, ms=0.0)


FIXTURE = [
    rec(0, 0, 0, 0.30),
    rec(1, 1, 1, 0.60),
    rec(2, 0, 1, 0.90),          # wrong, confident
    rec(3, 2, 2, 0.05),
    rec(4, 3, ABSTAIN, 0.0, p=0.2),
    rec(5, 1, 1, 1.40),
    rec(6, 2, ABSTAIN, 0.0, p=0.4),
    rec(7, 0, 0, 0.75),
    rec(8, 3, 2, 0.20, p=0.3),   # wrong, unconfident
    rec(9, 1, 1, 0.00),          # correct but zero radius
]


class TestMetrics:
    def test_certified_accuracy_examples(self):
        three = [rec(0, 0, 0, 0.3), rec(1, 0, 0, 0.6), rec(2, 1, 0, 0.9)]
        assert harness.certified_accuracy(three, 0.5) == pytest.approx(1 / 3)
        all_correct = [rec(i, 0, 0, 0.4) for i in range(4)]
        assert harness.certified_accuracy(all_correct, 0.0) == 1.0
        assert harness.certified_accuracy(all_correct, 99.0) == 0.0

    def test_fixture_hand_computation(self):
        # correct radii: 0.30, 0.60, 0.05, 1.40, 0.75, 0.20(wrong), 0.0
        assert harness.certified_accuracy(FIXTURE, 0.0) == pytest.approx(0.5)
        assert harness.certified_accuracy(FIXTURE, 0.5) == pytest.approx(0.3)
        assert harness.certified_accuracy(FIXTURE, 1.0) == pytest.approx(0.1)
        expected_acr = (0.30 + 0.60 + 0.05 + 1.40 + 0.75 + 0.0) / 10
        assert harness.acr(FIXTURE) == pytest.approx(expected_acr, abs=1e-15)

    def test_acr_examples(self):
        abstained = [rec(i, 0, ABSTAIN, 0.0) for i in range(3)]
        assert harness.acr(abstained) == 0.0
        two = [rec(0, 0, 0, 0.4), rec(1, 1, 0, 0.9)]
        assert harness.acr(two) == pytest.approx(0.2)

    def test_empirical_accuracy_examples(self):
        no_abst = [rec(0, 0, 0, 0.4), rec(1, 1, 0, 0.0)]
        assert harness.empirical_accuracy(no_abst, [True, True]) == \
            harness.certified_accuracy(no_abst, -1e-9)
        all_abst = [rec(i, 0, ABSTAIN, 0.0) for i in range(2)]
        assert harness.empirical_accuracy(all_abst, [True, True]) == 1.0
        mixed = [rec(0, 0, ABSTAIN, 0.0), rec(1, 1, 1, 0.5)]
        assert harness.empirical_accuracy(mixed, [False, True]) == 0.5

    def test_curve_monotone_and_acr_integral(self):
        rng = np.random.default_rng(6)
        records = [
            rec(i, int(rng.integers(0, 3)), int(rng.integers(-1, 3)),
                float(rng.uniform(0, 2)) if rng.random() > 0.2 else 0.0)
            for i in range(200)
        ]
        eps = np.arange(0.0, 2.5, 0.01)
        curve = harness.certified_accuracy_curve(records, eps)
        assert np.all(np.diff(curve) <= 1e-15)
        # exact step integral: sum of correct radii / N
        exact = sum(r.radius for r in records if r.correct) / len(records)
        # the curve is a step function; integrate it exactly on its support
        radii = sorted({r.radius for r in records if r.correct} | {0.0})
        integral = 0.0
        for lo, hi in zip(radii, radii[1:]):
            integral += harness.certified_accuracy(records, lo) * (hi - lo)
        assert abs(integral - exact) < 1e-9
        assert abs(harness.acr(records) - exact) < 1e-15


class TestSyntheticData:
    def test_reproducible_from_spec(self):
        spec = harness.default_dataset_spec(n_points=100, seed=5)
        a = harness.make_gaussian_mixture(spec)
        b = harness.make_gaussian_mixture(spec)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.labels, b.labels)

    def test_margins_span_and_labels(self):
        ds = harness.make_gaussian_mixture(harness.default_dataset_spec(400, 1))
        h = harness.default_classifier()
        clean = np.array([h.classify(p) for p in ds.points])
        assert np.mean(clean == ds.labels) > 0.95
        assert ds.n == 400 and ds.dim == 2

    def test_bad_spec(self):
        with pytest.raises(harness.ConfigError):
            harness.make_gaussian_mixture({"kind": "moons"})


class TestCriticalSigma:
    def test_constant_correct_never_falls(self):
        h = LinearClassifier(np.zeros((2, 1)), np.array([1.0, 0.0]))
        got = harness.critical_sigma_scan(h, np.zeros(1), 0, (0.1, 2.0), 0.1, "exact")
        assert math.isinf(got)

    def test_misclassified_at_origin_returns_lo(self):
        h = GridClassifier((np.array([0.0]),), np.array([0, 1]), 2)
        got = harness.critical_sigma_scan(h, np.array([-1.0]), 1, (0.1, 2.0),
                                          0.1, "exact")
        assert got == 0.1

    def test_interval_classifier_matches_closed_form(self):
        # cell [-1, 1] labeled 1: confidence 2*Phi(1/sigma) - 1 crosses 0.5
        # at sigma* = 1 / Phi^-1(0.75)
        from certsmooth.stats import std_normal_quantile

        h = GridClassifier((np.array([-1.0, 1.0]),), np.array([0, 1, 0]), 2)
        step = 0.01
        got = harness.critical_sigma_scan(h, np.zeros(1), 1, (0.5, 2.0), step, "exact")
        crossing = 1.0 / std_normal_quantile(0.75)
        assert got - step <= crossing <= got + step

    def test_monte_carlo_mode(self):
        h = GridClassifier((np.array([-1.0, 1.0]),), np.array([0, 1, 0]), 2)
        got = harness.critical_sigma_scan(h, np.zeros(1), 1, (0.5, 2.0), 0.05,
                                          4000, seed=9)
        assert 1.3 < got < 1.7


class TestRunBatch:
    def small_task(self, n_points=60):
        ds = harness.make_gaussian_mixture(
            harness.default_dataset_spec(n_points=n_points, seed=11))
        return ds, harness.default_classifier()

    def test_csv_bytes_deterministic_without_timing(self, tmp_path):
        ds, h = self.small_task()
        config = RunConfig(method="cascade", sigmas=(0.25, 1.0), n=400, n0=50,
                           seed=2, timing=False)
        harness.run_batch(ds, h, config, out_dir=tmp_path / "a")
        harness.run_batch(ds, h, config, out_dir=tmp_path / "b")
        assert (tmp_path / "a/records.csv").read_bytes() == \
            (tmp_path / "b/records.csv").read_bytes()
        assert (tmp_path / "a/summary.json").read_bytes() == \
            (tmp_path / "b/summary.json").read_bytes()
        assert (tmp_path / "a/curve.svg").read_bytes() == \
            (tmp_path / "b/curve.svg").read_bytes()

    def test_records_independent_of_thread_count(self):
        ds, h = self.small_task()
        base = RunConfig(method="cascade", sigmas=(0.25, 0.5), n=300, n0=50,
                         seed=4, timing=False)
        seq, _ = harness.run_batch(ds, h, base)
        import dataclasses

        par, _ = harness.run_batch(ds, h, dataclasses.replace(base, threads=4))
        assert seq == par

    def test_summary_schema_and_curve_monotone(self, tmp_path):
        ds, h = self.small_task()
        config = RunConfig(method="single", sigmas=(0.5,), n=300, n0=50, seed=1)
        records, summary = harness.run_batch(ds, h, config, out_dir=tmp_path)
        doc = json.loads((tmp_path / "summary.json").read_text())
        assert doc["config"]["method"] == "single"
        assert doc["config"]["n"] == 300
        assert len(doc["metrics"]["certified_accuracy"]) == len(config.epsilons)
        assert np.all(np.diff(summary.certified_accuracy) <= 1e-15)
        assert (tmp_path / "curve.svg").read_text().startswith("<svg")
        over = doc["metrics"]["over_smoothing_rate"] + doc["metrics"]["over_confidence_rate"]
        errors = 1 - harness.certified_accuracy(records, -1e-9)
        assert over == pytest.approx(errors, abs=1e-12)

    def test_csv_round_trip(self, tmp_path):
        ds, h = self.small_task(30)
        config = RunConfig(method="cascade", sigmas=(0.25, 0.5), n=200, n0=40,
                           seed=9, timing=False)
        records, _ = harness.run_batch(ds, h, config, out_dir=tmp_path)
        back = harness.read_records_csv(tmp_path / "records.csv")
        assert back == records

    def test_maxradius_method_smoke(self):
        ds, h = self.small_task(20)
        config = RunConfig(method="maxradius", sigmas=(0.25, 0.5), n=300,
                           n0=50, seed=5, timing=False)
        records, summary = harness.run_batch(ds, h, config)
        assert len(records) == 20
        assert all(r.radius >= 0.0 for r in records)

    def test_focal_method_smoke(self):
        ds, h = self.small_task(12)
        config = RunConfig(method="focal", sigmas=(0.5,), n=400, n0=50, seed=6,
                           focal_sigma0=0.5, focal_sigma1=0.25,
                           focal_masks=((1, 0), (0, 1)), timing=False)
        records, _ = harness.run_batch(ds, h, config)
        assert len(records) == 12
        assert all(r.radius >= 0.0 for r in records)

    def test_config_validation(self):
        with pytest.raises(harness.ConfigError):
            RunConfig(method="single", sigmas=(0.25, 0.5))
        with pytest.raises(harness.ConfigError):
            RunConfig(method="waffle")
        with pytest.raises(harness.ConfigError):
            RunConfig(p0=0.3)
        with pytest.raises(harness.ConfigError):
            RunConfig.from_dict({"schema_version": 99})

    def test_config_round_trip(self):
        config = RunConfig(method="cascade", sigmas=(0.25, 0.5), n=777, seed=3,
                           focal_masks=((1, 0), (0, 1)))
        back = RunConfig.from_dict(config.to_dict())
        assert back == config
