"""Evaluation harness: synthetic datasets, batch certification runs, and the
summary metrics (certified accuracy, ACR, empirical accuracy, abstention,
error decomposition), plus CSV/JSON/SVG emission.

Certified accuracy at eps is the fraction of the test set predicted
correctly with radius strictly greater than eps; ACR is the mean certified
radius counting incorrect or abstained samples as 0 and equals the integral
of the certified-accuracy curve.  Empirical accuracy additionally credits
abstentions whose clean (noise-free) prediction is correct.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import calibration, rng, stats
from ._backend import kernels
from .cascade import CascadeConfig, cascade_predict_certify
from .classifiers import GridClassifier, exact_smoothed_confidence
from .multipolicy import FocalMaskSet, focal_certify, max_radius_policy
from .smoothing import ABSTAIN, certify, sample_votes

__all__ = ["EvalRecord", "SummaryMetrics", "SyntheticDataset", "RunConfig",
           "ConfigError", "make_gaussian_mixture", "default_dataset_spec",
           "default_classifier", "certified_accuracy", "certified_accuracy_curve",
           "acr", "empirical_accuracy", "critical_sigma_scan", "run_batch",
           "write_records_csv", "read_records_csv", "write_svg_curve",
           "SIGMA_ABOVE_RANGE", "CSV_HEADER"]

SIGMA_ABOVE_RANGE = math.inf  # critical-sigma sentinel: never fell below 0.5

CSV_HEADER = ["sample_id", "true_label", "prediction", "radius",
              "halt_sigma", "p_lower", "seed", "ms"]

# Per-mask focal vote streams get their own phase block.
_FOCAL_PHASE_BASE = 100


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass(frozen=True)
class EvalRecord:
    """Per-sample certification outcome."""

    sample_id: int
    true_label: int
    prediction: int          # ABSTAIN for abstentions
    radius: float
    halt_sigma: float | None
    p_lower: float
    seed: int
    ms: float

    @property
    def correct(self) -> bool:
        return self.prediction == self.true_label


@dataclass(frozen=True)
class SummaryMetrics:
    epsilons: np.ndarray
    certified_accuracy: np.ndarray
    acr: float
    empirical_accuracy: float | None
    abstention_rate: float
    over_smoothing_rate: float
    over_confidence_rate: float
    num_samples: int

    def to_dict(self) -> dict:
        return {
            "epsilons": [float(e) for e in self.epsilons],
            "certified_accuracy": [float(a) for a in self.certified_accuracy],
            "acr": self.acr,
            "empirical_accuracy": self.empirical_accuracy,
            "abstention_rate": self.abstention_rate,
            "over_smoothing_rate": self.over_smoothing_rate,
            "over_confidence_rate": self.over_confidence_rate,
            "num_samples": self.num_samples,
        }


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticDataset:
    """Gaussian-mixture test set, reproducible from its generator spec."""

    points: np.ndarray
    labels: np.ndarray
    spec: dict

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def make_gaussian_mixture(spec: dict) -> SyntheticDataset:
    """Sample a mixture dataset: one isotropic Gaussian component per class."""
    if spec.get("kind", "gaussian_mixture") != "gaussian_mixture":
        raise ConfigError(f"unknown dataset kind {spec.get('kind')!r}")
    centers = np.asarray(spec["centers"], dtype=np.float64)
    scatter = np.asarray(spec["scatter"], dtype=np.float64)
    n_points = int(spec["n_points"])
    seed = int(spec.get("seed", 0))
    if centers.ndim != 2 or scatter.shape != (centers.shape[0],):
        raise ConfigError("centers must be (C, dim) with one scatter per class")
    gen = np.random.default_rng(seed)
    C = centers.shape[0]
    labels = np.arange(n_points) % C
    points = centers[labels] + scatter[labels, None] * gen.standard_normal(
        (n_points, centers.shape[1])
    )
    return SyntheticDataset(points=points, labels=labels.astype(np.int64), spec=dict(spec))


def default_dataset_spec(n_points: int = 1000, seed: int = 7) -> dict:
    """2-D 4-class mixture whose per-class margins span [0.2, 2.0].

    Classes sit in the four quadrants at distances 0.2 / 0.55 / 1.05 / 2.0
    from both axes, giving heterogeneous noise resilience: small-margin
    classes survive only small smoothing scales.
    """
    margins = [0.2, 0.55, 1.05, 2.0]
    signs = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
    centers = [[sx * m, sy * m] for m, (sx, sy) in zip(margins, signs)]
    return {
        "kind": "gaussian_mixture",
        "centers": centers,
        "scatter": [0.03 * m for m in margins],
        "n_points": n_points,
        "seed": seed,
    }


def default_classifier() -> GridClassifier:
    """Quadrant classifier matching :func:`default_dataset_spec` labels."""
    return GridClassifier(
        boundaries=(np.array([0.0]), np.array([0.0])),
        labels=np.array([[2, 1], [3, 0]]),
        num_classes=4,
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def certified_accuracy(records, epsilon: float) -> float:
    """Fraction predicted correctly with certified radius > epsilon."""
    if not records:
        raise ValueError("need at least one record")
    hits = sum(1 for r in records if r.correct and r.radius > epsilon)
    return hits / len(records)


def certified_accuracy_curve(records, epsilons) -> np.ndarray:
    radii = np.array([r.radius if r.correct else -1.0 for r in records])
    eps = np.asarray(epsilons, dtype=np.float64)
    return (radii[None, :] > eps[:, None]).mean(axis=1)


def acr(records) -> float:
    """Average certified radius; incorrect or abstained samples count 0."""
    if not records:
        raise ValueError("need at least one record")
    return float(np.mean([r.radius if r.correct else 0.0 for r in records]))


def empirical_accuracy(records, clean_correct) -> float:
    """Fraction certifiably correct or abstained-but-clean-correct."""
    clean_correct = np.asarray(clean_correct, dtype=bool)
    if clean_correct.shape != (len(records),):
        raise ValueError("need one clean-correctness flag per record")
    hits = sum(
        1 for r, cc in zip(records, clean_correct)
        if r.correct or (r.prediction == ABSTAIN and cc)
    )
    return hits / len(records)


def summarize(records, epsilons, clean_correct=None, p0: float = 0.5) -> SummaryMetrics:
    eps = np.asarray(epsilons, dtype=np.float64)
    curve = certified_accuracy_curve(records, eps)
    assert np.all(np.diff(curve) <= 0.0), "certified-accuracy curve must be nonincreasing"
    over_s, over_c = calibration.error_decomposition(
        [r.correct for r in records], [r.p_lower for r in records], p0
    )
    emp = None if clean_correct is None else empirical_accuracy(records, clean_correct)
    return SummaryMetrics(
        epsilons=eps,
        certified_accuracy=curve,
        acr=acr(records),
        empirical_accuracy=emp,
        abstention_rate=float(np.mean([r.prediction == ABSTAIN for r in records])),
        over_smoothing_rate=over_s,
        over_confidence_rate=over_c,
        num_samples=len(records),
    )


def critical_sigma_scan(handle, x, y: int, sigma_range, step: float,
                        n_or_exact, seed: int = 0, *, sample_id: int = 0) -> float:
    """Smallest scanned sigma where the true class's smoothed confidence
    falls below 0.5, or the above-range sentinel (inf) when it never does.

    ``n_or_exact`` is either a Monte-Carlo sample count or the string
    "exact" for analytic handles.
    """
    lo, hi = float(sigma_range[0]), float(sigma_range[1])
    if step <= 0 or hi < lo or lo <= 0:
        raise ValueError("need 0 < sigma_lo <= sigma_hi and step > 0")
    sigma = lo
    while sigma <= hi + 1e-12:
        if n_or_exact == "exact":
            conf = exact_smoothed_confidence(handle, x, sigma, y)
        else:
            votes = sample_votes(handle, x, sigma, int(n_or_exact), seed,
                                 sample_id=sample_id)
            conf = votes.counts[y] / votes.n
        if conf < 0.5:
            return sigma
        sigma = sigma + step
    return SIGMA_ABOVE_RANGE


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

CONFIG_SCHEMA_VERSION = 1
_METHODS = ("single", "cascade", "maxradius", "focal")


@dataclass(frozen=True)
class RunConfig:
    """Validated description of one harness run (the CLI-facing config)."""

    method: str = "cascade"
    sigmas: tuple = (0.25, 0.5, 1.0)
    p0: float = 0.5
    alpha: float = 0.001
    n: int = 10_000
    n0: int = 100
    seed: int = 0
    eps_start: float = 0.0
    eps_stop: float = 2.0
    eps_step: float = 0.01
    classifier: dict | None = None
    dataset: dict | None = None
    focal_sigma0: float = 1.0
    focal_sigma1: float = 0.5
    focal_masks: tuple | None = None
    loss_lambda: float = calibration.DEFAULT_LAMBDA
    loss_alpha_w: float = calibration.DEFAULT_ALPHA_WEIGHT
    loss_beta: float = calibration.DEFAULT_BETA
    timing: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ConfigError(f"method must be one of {_METHODS}, got {self.method!r}")
        sigmas = tuple(float(s) for s in self.sigmas)
        if not sigmas or any(s <= 0 for s in sigmas) or any(
            a >= b for a, b in zip(sigmas, sigmas[1:])
        ):
            raise ConfigError("sigmas must be strictly increasing positives")
        if self.method == "single" and len(sigmas) != 1:
            raise ConfigError("method 'single' takes exactly one sigma")
        if not 0.5 <= self.p0 < 1.0:
            raise ConfigError("p0 must lie in [0.5, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.n < 1 or self.n0 < 1:
            raise ConfigError("n and n0 must be >= 1")
        if self.eps_step <= 0 or self.eps_stop < self.eps_start:
            raise ConfigError("invalid epsilon grid")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.method == "focal" and not self.focal_sigma0 > self.focal_sigma1 > 0:
            raise ConfigError("focal needs sigma0 > sigma1 > 0")
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def epsilons(self) -> np.ndarray:
        count = int(round((self.eps_stop - self.eps_start) / self.eps_step)) + 1
        return self.eps_start + self.eps_step * np.arange(count)

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "method": self.method,
            "sigmas": list(self.sigmas),
            "p0": self.p0,
            "alpha": self.alpha,
            "n": self.n,
            "n0": self.n0,
            "seed": self.seed,
            "eps_grid": {"start": self.eps_start, "stop": self.eps_stop,
                         "step": self.eps_step},
            "classifier": self.classifier,
            "dataset": self.dataset,
            "focal": {
                "sigma0": self.focal_sigma0,
                "sigma1": self.focal_sigma1,
                "masks": None if self.focal_masks is None
                else [list(m) for m in self.focal_masks],
            },
            "losses": {"lambda": self.loss_lambda, "alpha_w": self.loss_alpha_w,
                       "beta": self.loss_beta},
            "timing": self.timing,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a JSON object")
        version = doc.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        kwargs: dict = {}
        for key in ("method", "p0", "alpha", "n", "n0", "seed", "classifier",
                    "dataset", "timing", "threads"):
            if key in doc:
                kwargs[key] = doc[key]
        if "sigmas" in doc:
            kwargs["sigmas"] = tuple(doc["sigmas"])
        grid = doc.get("eps_grid", {})
        for src, dst in (("start", "eps_start"), ("stop", "eps_stop"), ("step", "eps_step")):
            if src in grid:
                kwargs[dst] = grid[src]
        focal = doc.get("focal", {})
        if "sigma0" in focal:
            kwargs["focal_sigma0"] = focal["sigma0"]
        if "sigma1" in focal:
            kwargs["focal_sigma1"] = focal["sigma1"]
        if focal.get("masks") is not None:
            kwargs["focal_masks"] = tuple(tuple(m) for m in focal["masks"])
        losses = doc.get("losses", {})
        for src, dst in (("lambda", "loss_lambda"), ("alpha_w", "loss_alpha_w"),
                         ("beta", "loss_beta")):
            if src in losses:
                kwargs[dst] = losses[src]
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# Batch runs
# ---------------------------------------------------------------------------

def _maxradius_sample(handle, x, config: RunConfig, sample_id: int):
    # Mirror of the cascade estimation: per scale, Clopper-Pearson lower
    # bound for that scale's guessed winner and Goodman upper bounds for
    # the rest, all at the Bonferroni level alpha / (2K) (two procedures
    # per scale), then the policy on the bounded confidence matrix.
    K = len(config.sigmas)
    level = stats.bonferroni_adjust(config.alpha, 2 * K)
    conf = np.zeros((K, handle.num_classes))
    for i, sigma in enumerate(config.sigmas):
        selection = sample_votes(handle, x, sigma, config.n0, config.seed,
                                 sample_id=sample_id, phase=rng.PHASE_SELECT)
        guess = selection.top_class
        estimation = sample_votes(handle, x, sigma, config.n, config.seed,
                                  sample_id=sample_id, phase=rng.PHASE_ESTIMATE)
        conf[i] = stats.goodman_upper(estimation.counts, level)
        conf[i, guess] = stats.clopper_pearson_lower(
            int(estimation.counts[guess]), config.n, level
        )
    sigmas = np.asarray(config.sigmas)
    prediction, radius = max_radius_policy(conf, sigmas)
    star = _winning_scale_index(conf, sigmas)
    if prediction == ABSTAIN:
        return ABSTAIN, 0.0, None, float(conf[star].max())
    return prediction, radius, float(sigmas[star]), float(conf[star, prediction])


def _winning_scale_index(conf: np.ndarray, sigmas: np.ndarray) -> int:
    clamped = np.clip(conf, stats.PROB_EPS, 1.0 - stats.PROB_EPS)
    quant = np.vectorize(stats.std_normal_quantile)(clamped)
    scores = sigmas * quant[np.arange(sigmas.size), np.argmax(conf, axis=1)]
    return int(np.argmax(scores))


def _focal_sample(handle, x, config: RunConfig, sample_id: int):
    if config.focal_masks is None:
        raise ConfigError("focal runs require masks")
    masks = FocalMaskSet(np.asarray(config.focal_masks))
    K = masks.K
    x = np.asarray(x, dtype=np.float64)
    counts = []
    for k in range(K):
        z = kernels.standard_normal_rows(
            config.seed, sample_id, config.focal_sigma0, _FOCAL_PHASE_BASE + k,
            config.n, x.size,
        )
        pts = x + masks.noise_scale(k, config.focal_sigma0, config.focal_sigma1) * z
        labels = handle.classify_batch(pts)
        counts.append(np.bincount(labels, minlength=handle.num_classes))
    counts = np.asarray(counts)
    prediction = int(np.argmax(counts.sum(axis=0)))
    p_masks = counts[:, prediction] / config.n
    cert = focal_certify(p_masks, config.focal_sigma0, config.focal_sigma1,
                         alpha=config.alpha, n=config.n)
    if cert.abstained:
        return ABSTAIN, 0.0, None, cert.p_hat
    return prediction, cert.radius, None, cert.p_hat


def _certify_sample(handle, x, config: RunConfig, sample_id: int) -> tuple:
    if config.method == "single":
        res = certify(handle, x, config.sigmas[0], config.n0, config.n,
                      config.alpha, config.seed, p0=config.p0, sample_id=sample_id)
        halt = None if res.abstained else res.sigma
        return res.prediction, res.radius, halt, res.p_lower
    if config.method == "cascade":
        trace = cascade_predict_certify(
            handle, x,
            CascadeConfig(sigmas=config.sigmas, p0=config.p0, alpha=config.alpha,
                          n=config.n, n0=config.n0, seed=config.seed),
            sample_id=sample_id,
        )
        # stages[-1] is the halting stage when halted, the last tried otherwise
        return trace.prediction, trace.radius, trace.halt_sigma, trace.stages[-1].p_lower
    if config.method == "maxradius":
        return _maxradius_sample(handle, x, config, sample_id)
    if config.method == "focal":
        return _focal_sample(handle, x, config, sample_id)
    raise ConfigError(f"unknown method {config.method!r}")


def run_batch(dataset: SyntheticDataset, handle, config: RunConfig,
              out_dir=None):
    """Certify every dataset sample with the configured method.

    Returns ``(records, summary)``; when ``out_dir`` is given also writes
    ``records.csv``, ``summary.json`` (echoing the effective config) and
    ``curve.svg`` under it.  Identical config and seed give identical
    records; with ``timing=False`` the CSV bytes are identical too.
    """
    def one(sample_id: int) -> EvalRecord:
        x = dataset.points[sample_id]
        start = time.perf_counter()
        prediction, radius, halt_sigma, p_low = _certify_sample(
            handle, x, config, sample_id
        )
        ms = (time.perf_counter() - start) * 1e3 if config.timing else 0.0
        return EvalRecord(
            sample_id=sample_id, true_label=int(dataset.labels[sample_id]),
            prediction=int(prediction), radius=float(radius),
            halt_sigma=halt_sigma, p_lower=float(p_low),
            seed=config.seed, ms=ms,
        )

    ids = range(dataset.n)
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            records = list(pool.map(one, ids))
    else:
        records = [one(i) for i in ids]

    clean = np.array([handle.classify(p) for p in dataset.points])
    clean_correct = clean == dataset.labels
    summary = summarize(records, config.epsilons, clean_correct, config.p0)

    if out_dir is not None:
        from pathlib import Path

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records_csv(records, out / "records.csv")
        doc = {"config": config.to_dict(), "metrics": summary.to_dict()}
        (out / "summary.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        write_svg_curve(summary.epsilons, summary.certified_accuracy, out / "curve.svg")
    return records, summary


# ---------------------------------------------------------------------------
# Record and plot emission
# ---------------------------------------------------------------------------

def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in sorted(records, key=lambda r: r.sample_id):
            writer.writerow([
                r.sample_id, r.true_label,
                "ABSTAIN" if r.prediction == ABSTAIN else r.prediction,
                repr(r.radius),
                "" if r.halt_sigma is None else repr(r.halt_sigma),
                repr(r.p_lower), r.seed, repr(r.ms),
            ])


def read_records_csv(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for row in reader:
            records.append(EvalRecord(
                sample_id=int(row["sample_id"]),
                true_label=int(row["true_label"]),
                prediction=ABSTAIN if row["prediction"] == "ABSTAIN"
                else int(row["prediction"]),
                radius=float(row["radius"]),
                halt_sigma=None if row["halt_sigma"] == "" else float(row["halt_sigma"]),
                p_lower=float(row["p_lower"]),
                seed=int(row["seed"]),
                ms=float(row["ms"]),
            ))
    return records


def write_svg_curve(epsilons, accuracies, path, *, width=640, height=420) -> None:
    """Plain-text SVG of the certified-accuracy step curve.

    Structure: fixed canvas, axes as <line>, the curve as one <polyline>
    in data order, tick labels as <text>.  No plotting dependency.
    """
    eps = np.asarray(epsilons, dtype=np.float64)
    acc = np.asarray(accuracies, dtype=np.float64)
    left, right, top, bottom = 60, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    span = max(float(eps[-1] - eps[0]), 1e-12)

    def sx(e):
        return left + pw * (e - eps[0]) / span

    def sy(a):
        return top + ph * (1.0 - a)

    pts = " ".join(f"{sx(e):.2f},{sy(a):.2f}" for e, a in zip(eps, acc))
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
        f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        e = eps[0] + frac * span
        lines.append(
            f'<text x="{sx(e):.2f}" y="{height - 28}" font-size="11" '
            f'text-anchor="middle">{e:.2f}</text>'
        )
        lines.append(
            f'<text x="{left - 8}" y="{sy(frac):.2f}" font-size="11" '
            f'text-anchor="end">{frac:.2f}</text>'
        )
    lines.append(
        f'<text x="{left + pw / 2:.2f}" y="{height - 8}" font-size="12" '
        f'text-anchor="middle">certified radius</text>'
    )
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
