"""Base-classifier handles, exact smoothed confidences, and the external
noise/prediction file protocol.

Three handle kinds exist.  ``LinearClassifier`` and ``GridClassifier`` are
analytic verification oracles whose Gaussian-smoothed confidences can be
computed without sampling; ``ExternalDumpClassifier`` represents a model
evaluated out of process through the binary noise-batch protocol.

Argmax ties break toward the lowest class index everywhere.

External protocol (version 1)
-----------------------------
Noise batch files carry a little-endian fixed header of 8 fields::

    magic    8 bytes   b"CSNOISE1"
    version  uint32    1
    sample_id uint64
    sigma    float64
    n        uint64    row count
    dim      uint32
    seed     uint64
    checksum uint32    crc32 of the payload

followed by the n*dim noisy points ``x + delta_i`` as float32 row-major,
plus a JSON sidecar (``<path>.json``) mirroring the header.  Prediction
dumps are identical except for magic b"CSPREDS1" and an int32 label payload.
Noise rows are a pure function of (seed, sample_id, sigma) -- see
:mod:`certsmooth.rng` -- so re-emission is bit-identical and prefix-stable
in n.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate
from scipy.special import ndtr

from ._backend import kernels
from .rng import PHASE_BATCH

__all__ = [
    "LinearClassifier",
    "GridClassifier",
    "ExternalDumpClassifier",
    "NoiseBatchSpec",
    "classify",
    "exact_smoothed_confidence",
    "exact_confidence_vector",
    "exact_confidence_batch",
    "emit_noise_batch",
    "load_noise_batch",
    "write_prediction_dump",
    "ingest_predictions",
    "load_classifier",
    "classifier_from_dict",
    "classifier_to_dict",
    "ProtocolError",
    "MissingPredictionError",
    "UnsupportedKindError",
]


class ProtocolError(Exception):
    """Malformed or inconsistent noise/prediction protocol file."""


class MissingPredictionError(KeyError):
    """External-dump handle queried for a record it does not hold."""


class UnsupportedKindError(TypeError):
    """Operation not defined for this classifier kind."""


def _check_dim(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ValueError(f"point has shape {x.shape}, classifier expects ({dim},)")
    return x


@dataclass(frozen=True)
class LinearClassifier:
    """Multiclass linear classifier: argmax_c (w_c . x + b_c)."""

    weights: np.ndarray  # (num_classes, dim)
    biases: np.ndarray   # (num_classes,)

    kind = "analytic-linear"

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        b = np.ascontiguousarray(self.biases, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 2:
            raise ValueError("weights must be (num_classes >= 2, dim)")
        if b.shape != (w.shape[0],):
            raise ValueError("biases must have one entry per class")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def classify(self, x) -> int:
        x = _check_dim(x, self.dim)
        return int(np.argmax(self.weights @ x + self.biases))

    def classify_batch(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return np.argmax(pts @ self.weights.T + self.biases, axis=1)


@dataclass(frozen=True)
class GridClassifier:
    """Piecewise-constant classifier on an axis-aligned grid, dim <= 3.

    ``boundaries[d]`` are the sorted cut points along axis d; a coordinate
    equal to a cut point belongs to the upper cell.  ``labels`` has shape
    ``tuple(len(b) + 1 for b in boundaries)``.
    """

    boundaries: tuple
    labels: np.ndarray
    num_classes: int

    kind = "tabular-grid"

    def __post_init__(self):
        bnds = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in self.boundaries)
        if not 1 <= len(bnds) <= 3:
            raise ValueError("grid classifiers support 1 <= dim <= 3")
        for b in bnds:
            if b.ndim != 1 or (b.size > 1 and np.any(np.diff(b) <= 0)):
                raise ValueError("boundaries must be strictly increasing 1-D arrays")
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        expected = tuple(b.size + 1 for b in bnds)
        if labels.shape != expected:
            raise ValueError(f"labels shape {labels.shape} != cells {expected}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValueError("cell labels out of class range")
        object.__setattr__(self, "boundaries", bnds)
        object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return len(self.boundaries)

    def _flat_labels_strides(self):
        flat = self.labels.reshape(-1)
        strides = np.array(
            [s // self.labels.itemsize for s in self.labels.strides], dtype=np.int64
        )
        return flat, strides

    def classify(self, x) -> int:
        x = _check_dim(x, self.dim)
        idx = tuple(
            int(np.searchsorted(b, v, side="right")) for b, v in zip(self.boundaries, x)
        )
        return int(self.labels[idx])

    def classify_batch(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        flat, strides = self._flat_labels_strides()
        cell = np.zeros(pts.shape[0], dtype=np.int64)
        for d, b in enumerate(self.boundaries):
            cell += strides[d] * np.searchsorted(b, pts[:, d], side="right")
        return flat[cell]


class ExternalDumpClassifier:
    """Handle backed by out-of-process prediction dumps.

    Holds ingested label sequences keyed by the noise stream they answer;
    it cannot classify arbitrary points.
    """

    kind = "external-dump"

    def __init__(self, num_classes: int, dim: int):
        if num_classes < 2 or dim < 1:
            raise ValueError("need num_classes >= 2 and dim >= 1")
        self.num_classes = int(num_classes)
        self.dim = int(dim)
        self._records: dict = {}

    @staticmethod
    def _key(sample_id, sigma, n, seed, phase):
        return (int(sample_id), float(sigma), int(n), int(seed), int(phase))

    def add_record(self, spec: "NoiseBatchSpec", labels, phase: int = PHASE_BATCH):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (spec.n,):
            raise ProtocolError(f"expected {spec.n} labels, got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ProtocolError("ingested label out of class range")
        self._records[self._key(spec.sample_id, spec.sigma, spec.n, spec.rng_seed, phase)] = labels

    def lookup(self, sample_id, sigma, n, seed, phase) -> np.ndarray:
        key = self._key(sample_id, sigma, n, seed, phase)
        try:
            return self._records[key]
        except KeyError:
            raise MissingPredictionError(
                f"no prediction record for sample_id={sample_id} sigma={sigma} "
                f"n={n} seed={seed} phase={phase}"
            ) from None

    def classify(self, x) -> int:
        raise MissingPredictionError(
            "external-dump classifiers answer only recorded noise batches"
        )


def classify(handle, x) -> int:
    """Deterministic label of ``handle`` at point ``x``."""
    return handle.classify(x)


# ---------------------------------------------------------------------------
# Exact smoothed confidences (analytic / tabular handles only)
# ---------------------------------------------------------------------------

_QUAD_LIMIT = 9.0  # integrate u over [-9, 9]; truncated normal mass < 1e-18


def _linear_binary_vector(handle: LinearClassifier, x, sigma: float) -> np.ndarray:
    dw = handle.weights[0] - handle.weights[1]
    db = handle.biases[0] - handle.biases[1]
    norm = float(np.linalg.norm(dw))
    if norm == 0.0:
        p0 = 1.0 if db >= 0.0 else 0.0
    else:
        p0 = float(ndtr((dw @ x + db) / (sigma * norm)))
    return np.array([p0, 1.0 - p0])


def _linear_1d_vector(handle: LinearClassifier, x, sigma: float) -> np.ndarray:
    # In one dimension each class region is an interval of the line.
    w = handle.weights[:, 0]
    b = handle.biases
    out = np.zeros(handle.num_classes)
    for c in range(handle.num_classes):
        lo, hi = -np.inf, np.inf
        dead = False
        for j in range(handle.num_classes):
            if j == c:
                continue
            dw = w[c] - w[j]
            db = b[c] - b[j]
            if dw == 0.0:
                if db < 0.0 or (db == 0.0 and j < c):
                    dead = True
                    break
                continue
            # dw*z + db >= 0
            if dw > 0.0:
                lo = max(lo, -db / dw)
            else:
                hi = min(hi, -db / dw)
        if dead or lo >= hi:
            continue
        out[c] = float(ndtr((hi - x[0]) / sigma) - ndtr((lo - x[0]) / sigma))
    return out


def _linear_2d_class(handle: LinearClassifier, x, sigma: float, c: int) -> float:
    # P[ x + sigma*u in region c ], u ~ N(0, I2), via reduction to a smooth
    # 1-D integrand: for fixed u1 = s, the region slice in u2 is an interval.
    lower, upper = [], []          # (slope, intercept) of t-bounds as fn of s
    s_lo, s_hi = -_QUAD_LIMIT, _QUAD_LIMIT
    for j in range(handle.num_classes):
        if j == c:
            continue
        dw = handle.weights[c] - handle.weights[j]
        db = float(dw @ x + handle.biases[c] - handle.biases[j])
        p, q = sigma * dw[0], sigma * dw[1]
        # constraint: p*s + q*t + db >= 0
        if p == 0.0 and q == 0.0:
            if db < 0.0 or (db == 0.0 and j < c):
                return 0.0
            continue
        if q > 0.0:
            lower.append((-p / q, -db / q))
        elif q < 0.0:
            upper.append((-p / q, -db / q))
        elif p > 0.0:
            s_lo = max(s_lo, -db / p)
        else:
            s_hi = min(s_hi, -db / p)
    if s_lo >= s_hi:
        return 0.0

    def integrand(s: float) -> float:
        lo = max((m * s + k for m, k in lower), default=-np.inf)
        hi = min((m * s + k for m, k in upper), default=np.inf)
        if hi <= lo:
            return 0.0
        dens = np.exp(-0.5 * s * s) / np.sqrt(2.0 * np.pi)
        return dens * float(ndtr(hi) - ndtr(lo))

    # Kinks sit where two slice bounds cross; hand them to quad.
    lines = lower + upper
    breaks = set()
    for i in range(len(lines)):
        for j in range(i + 1, len(lines)):
            dm = lines[i][0] - lines[j][0]
            if dm != 0.0:
                s = (lines[j][1] - lines[i][1]) / dm
                if s_lo < s < s_hi:
                    breaks.add(s)
    val, _ = integrate.quad(
        integrand, s_lo, s_hi, points=sorted(breaks) or None,
        limit=200, epsabs=1e-12, epsrel=1e-12,
    )
    return min(max(val, 0.0), 1.0)


def _grid_axis_masses(b: np.ndarray, coord, sigma: float) -> np.ndarray:
    edges = np.concatenate(([-np.inf], b, [np.inf]))
    coord = np.atleast_1d(np.asarray(coord, dtype=np.float64))
    cdf = ndtr((edges[None, :] - coord[:, None]) / sigma)
    return np.diff(cdf, axis=1)


def _grid_vector_batch(handle: GridClassifier, X: np.ndarray, sigma: float) -> np.ndarray:
    masses = _grid_axis_masses(handle.boundaries[0], X[:, 0], sigma)
    for d in range(1, handle.dim):
        nxt = _grid_axis_masses(handle.boundaries[d], X[:, d], sigma)
        masses = masses[:, :, None] * nxt[:, None, :]
        masses = masses.reshape(X.shape[0], -1)
    onehot = np.zeros((handle.labels.size, handle.num_classes))
    onehot[np.arange(handle.labels.size), handle.labels.reshape(-1)] = 1.0
    return masses @ onehot


def exact_confidence_vector(handle, x, sigma: float) -> np.ndarray:
    """All-class smoothed confidences P[classify(x + delta) = c], delta ~ N(0, sigma^2 I).

    Closed form for binary-linear, 1-D linear and grid handles; adaptive
    slice quadrature (abs error well under 1e-9) for 2-D multiclass linear.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    if isinstance(handle, LinearClassifier):
        x = _check_dim(x, handle.dim)
        if handle.num_classes == 2:
            return _linear_binary_vector(handle, x, sigma)
        if handle.dim == 1:
            return _linear_1d_vector(handle, x, sigma)
        if handle.dim == 2:
            return np.array(
                [_linear_2d_class(handle, x, sigma, c) for c in range(handle.num_classes)]
            )
        raise UnsupportedKindError(
            "exact confidences for multiclass linear handles require dim <= 2"
        )
    if isinstance(handle, GridClassifier):
        x = _check_dim(x, handle.dim)
        return _grid_vector_batch(handle, x[None, :], sigma)[0]
    raise UnsupportedKindError(
        f"exact smoothed confidence unavailable for kind {getattr(handle, 'kind', '?')!r}"
    )


def exact_smoothed_confidence(handle, x, sigma: float, class_index: int) -> float:
    """Exact smoothed confidence of one class (see :func:`exact_confidence_vector`)."""
    vec = exact_confidence_vector(handle, x, sigma)
    if not 0 <= class_index < vec.size:
        raise ValueError(f"class index {class_index} out of range")
    return float(vec[class_index])


def exact_confidence_batch(handle, points, sigma: float) -> np.ndarray:
    """Exact confidences for a batch of points, shape (B, num_classes)."""
    pts = np.asarray(points, dtype=np.float64)
    if isinstance(handle, GridClassifier):
        return _grid_vector_batch(handle, pts, sigma)
    if isinstance(handle, LinearClassifier) and handle.num_classes == 2:
        dw = handle.weights[0] - handle.weights[1]
        db = handle.biases[0] - handle.biases[1]
        norm = float(np.linalg.norm(dw))
        if norm == 0.0:
            p0 = np.full(pts.shape[0], 1.0 if db >= 0.0 else 0.0)
        else:
            p0 = ndtr((pts @ dw + db) / (sigma * norm))
        return np.column_stack([p0, 1.0 - p0])
    return np.stack([exact_confidence_vector(handle, p, sigma) for p in pts])


# ---------------------------------------------------------------------------
# External noise / prediction protocol
# ---------------------------------------------------------------------------

_NOISE_MAGIC = b"CSNOISE1"
_PRED_MAGIC = b"CSPREDS1"
_HEADER_FMT = "<8sIQdQIQI"  # magic, version, sample_id, sigma, n, dim, seed, checksum
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)
PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class NoiseBatchSpec:
    """Identity of one reproducible noise batch."""

    sample_id: int
    sigma: float
    n: int
    rng_seed: int
    dim: int

    def __post_init__(self):
        if self.n < 0 or self.dim < 1 or self.sigma < 0.0:
            raise ValueError("invalid noise batch spec")


def noise_points(spec: NoiseBatchSpec, x, phase: int = PHASE_BATCH) -> np.ndarray:
    """The float64 noisy rows x + delta_i, regenerated from the batch identity."""
    x = _check_dim(x, spec.dim)
    z = kernels.standard_normal_rows(
        spec.rng_seed, spec.sample_id, spec.sigma, phase, spec.n, spec.dim
    )
    return x + spec.sigma * z


def _write_protocol_file(path, magic: bytes, spec: NoiseBatchSpec, payload: bytes) -> None:
    checksum = zlib.crc32(payload) & 0xFFFFFFFF
    header = struct.pack(
        _HEADER_FMT, magic, PROTOCOL_VERSION, spec.sample_id, float(spec.sigma),
        spec.n, spec.dim, spec.rng_seed, checksum,
    )
    path = Path(path)
    path.write_bytes(header + payload)
    sidecar = {
        "magic": magic.decode("ascii"),
        "version": PROTOCOL_VERSION,
        "sample_id": spec.sample_id,
        "sigma": float(spec.sigma),
        "n": spec.n,
        "dim": spec.dim,
        "seed": spec.rng_seed,
        "checksum": checksum,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")


def _read_protocol_file(path, magic: bytes):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER_SIZE:
        raise ProtocolError(f"{path}: truncated header")
    got_magic, version, sample_id, sigma, n, dim, seed, checksum = struct.unpack(
        _HEADER_FMT, raw[:_HEADER_SIZE]
    )
    if got_magic != magic:
        raise ProtocolError(f"{path}: bad magic {got_magic!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"{path}: unsupported version {version}")
    payload = raw[_HEADER_SIZE:]
    if zlib.crc32(payload) & 0xFFFFFFFF != checksum:
        raise ProtocolError(f"{path}: checksum mismatch")
    spec = NoiseBatchSpec(sample_id=sample_id, sigma=sigma, n=n, rng_seed=seed, dim=dim)
    return spec, payload


def emit_noise_batch(spec: NoiseBatchSpec, x, path, phase: int = PHASE_BATCH) -> None:
    """Write the batch's noisy points in the binary protocol format.

    Re-invocation with the same spec produces bit-identical files.
    """
    pts = noise_points(spec, x, phase) if spec.n else np.empty((0, spec.dim))
    payload = np.ascontiguousarray(pts, dtype="<f4").tobytes()
    _write_protocol_file(path, _NOISE_MAGIC, spec, payload)


def load_noise_batch(path):
    """Read a noise batch file; returns (spec, points float32 array)."""
    spec, payload = _read_protocol_file(path, _NOISE_MAGIC)
    expected = spec.n * spec.dim * 4
    if len(payload) != expected:
        raise ProtocolError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    pts = np.frombuffer(payload, dtype="<f4").reshape(spec.n, spec.dim)
    return spec, pts


def write_prediction_dump(spec: NoiseBatchSpec, labels, path) -> None:
    """Write per-row labels answering a noise batch, same header layout."""
    labels = np.asarray(labels, dtype="<i4")
    if labels.shape != (spec.n,):
        raise ProtocolError(f"expected {spec.n} labels, got shape {labels.shape}")
    _write_protocol_file(path, _PRED_MAGIC, spec, labels.tobytes())


def ingest_predictions(spec: NoiseBatchSpec, path, num_classes: int | None = None) -> np.ndarray:
    """Read a prediction dump, validating it against the expected spec.

    Returns the labels in emitted-noise order.  Raises :class:`ProtocolError`
    on count mismatch, out-of-range labels, checksum or header mismatch.
    """
    got_spec, payload = _read_protocol_file(path, _PRED_MAGIC)
    if got_spec != spec:
        raise ProtocolError(f"{path}: header {got_spec} does not match expected {spec}")
    if len(payload) != spec.n * 4:
        raise ProtocolError(f"{path}: row count mismatch")
    labels = np.frombuffer(payload, dtype="<i4").astype(np.int64)
    if labels.size and labels.min() < 0:
        raise ProtocolError(f"{path}: negative label")
    if num_classes is not None and labels.size and labels.max() >= num_classes:
        raise ProtocolError(f"{path}: label out of range [0, {num_classes})")
    return labels


# ---------------------------------------------------------------------------
# JSON classifier definitions
# ---------------------------------------------------------------------------

def classifier_to_dict(handle) -> dict:
    """JSON-serializable definition of a built-in handle."""
    if isinstance(handle, LinearClassifier):
        return {
            "kind": "linear",
            "weights": handle.weights.tolist(),
            "biases": handle.biases.tolist(),
        }
    if isinstance(handle, GridClassifier):
        return {
            "kind": "grid",
            "boundaries": [b.tolist() for b in handle.boundaries],
            "labels": handle.labels.tolist(),
            "num_classes": handle.num_classes,
        }
    raise UnsupportedKindError(f"cannot serialize handle kind {getattr(handle, 'kind', '?')!r}")


def classifier_from_dict(spec: dict):
    kind = spec.get("kind")
    if kind == "linear":
        return LinearClassifier(np.asarray(spec["weights"]), np.asarray(spec["biases"]))
    if kind == "grid":
        return GridClassifier(
            tuple(np.asarray(b) for b in spec["boundaries"]),
            np.asarray(spec["labels"]),
            int(spec["num_classes"]),
        )
    raise ValueError(f"unknown classifier kind {kind!r}")


def load_classifier(path):
    """Load a classifier definition from a JSON document."""
    with open(path) as fh:
        return classifier_from_dict(json.load(fh))
