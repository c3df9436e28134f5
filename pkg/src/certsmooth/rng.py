"""Counter-based noise derivation for reproducible, parallel-safe sampling.

Every Gaussian perturbation is a pure function of ``(seed, sample_id,
sigma, phase, draw_index)``: a 128-bit Philox key is derived by hashing
those coordinates, and the i-th noise row consumes uniforms at fixed
positions of that keyed stream.  Chunked, threaded, or re-run evaluation
therefore reproduces bit-identical noise.

Stream layout (version 1), stable across platforms and documented for
external reimplementation:

* key   = first 16 bytes of SHA-256("certsmooth-noise-v1" || LE64(seed)
          || LE64(sample_id) || LE64(float64-bits of sigma) || LE64(phase)),
          interpreted little-endian as the 128-bit Philox-4x64-10 key;
          counter starts at 0.
* u_t   = 53-bit doubles from the keyed stream (numpy ``next_double``),
          consumed row-major over the (n, dim) noise matrix and clamped
          below by 2**-53.
* z_t   = ndtri(u_t)  (Cephes inverse normal CDF, as shipped by scipy).
* row_i = x + sigma * (z_{i*dim}, ..., z_{i*dim + dim - 1}).

Phases keep the statistically independent draws of one certification on
disjoint streams: the selection draw must not share randomness with the
estimation draw or the Clopper-Pearson bound is invalid.
"""

from __future__ import annotations

import hashlib
import struct

from numpy.random import Philox

__all__ = [
    "NOISE_STREAM_VERSION",
    "PHASE_BATCH",
    "PHASE_SELECT",
    "PHASE_ESTIMATE",
    "PHASE_PREDICT",
    "philox_key",
    "make_bit_generator",
    "MIN_UNIFORM",
]

NOISE_STREAM_VERSION = 1

PHASE_BATCH = 0      # plain vote batches and the external noise protocol
PHASE_SELECT = 1     # the n0-sample selection draw of certify
PHASE_ESTIMATE = 2   # the n-sample estimation draw of certify
PHASE_PREDICT = 3    # the single draw of predict

# Smallest uniform fed to the inverse CDF; next_double can return exactly 0.
MIN_UNIFORM = 2.0 ** -53

_TAG = b"certsmooth-noise-v1"


def philox_key(seed: int, sample_id: int, sigma: float, phase: int) -> int:
    """Derive the 128-bit Philox key for one noise stream."""
    payload = _TAG + struct.pack(
        "<QQQQ",
        int(seed) & 0xFFFFFFFFFFFFFFFF,
        int(sample_id) & 0xFFFFFFFFFFFFFFFF,
        struct.unpack("<Q", struct.pack("<d", float(sigma)))[0],
        int(phase) & 0xFFFFFFFFFFFFFFFF,
    )
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:16], "little")


def make_bit_generator(seed: int, sample_id: int, sigma: float, phase: int) -> Philox:
    """Fresh Philox bit generator positioned at the start of the stream."""
    return Philox(key=philox_key(seed, sample_id, sigma, phase))
