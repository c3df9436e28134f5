"""Pure-numpy vote-counting kernels (fallback backend).

Mirrors the compiled backend in ``_kernels.pyx`` bit for bit: both consume
the same Philox uniform stream row-major, clamp uniforms below by 2**-53,
map them through Cephes ``ndtri``, and break argmax ties toward the lowest
class index.  ``CERTSMOOTH_PURE=1`` forces this backend at import time.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator
from scipy.special import ndtri

from .rng import MIN_UNIFORM, make_bit_generator

BACKEND_NAME = "python"

# Per-chunk uniform budget; keeps peak memory modest for n ~ 1e6 draws.
_CHUNK_DOUBLES = 1 << 22


def standard_normal_rows(seed: int, sample_id: int, sigma: float, phase: int,
                         n: int, dim: int) -> np.ndarray:
    """The (n, dim) standard normal matrix of one noise stream."""
    gen = Generator(make_bit_generator(seed, sample_id, sigma, phase))
    u = gen.random(n * dim)
    np.maximum(u, MIN_UNIFORM, out=u)
    return ndtri(u).reshape(n, dim)


def _noisy_chunks(seed, sample_id, sigma, phase, x, n):
    x = np.asarray(x, dtype=np.float64)
    dim = x.size
    gen = Generator(make_bit_generator(seed, sample_id, sigma, phase))
    rows_per_chunk = max(1, _CHUNK_DOUBLES // max(dim, 1))
    done = 0
    while done < n:
        m = min(rows_per_chunk, n - done)
        u = gen.random(m * dim)
        np.maximum(u, MIN_UNIFORM, out=u)
        yield x + sigma * ndtri(u).reshape(m, dim)
        done += m


def count_votes_linear(seed: int, sample_id: int, sigma: float, phase: int,
                       x, weights, biases, n: int) -> np.ndarray:
    """Vote histogram of argmax(W p + b) over n noisy evaluations."""
    weights = np.asarray(weights, dtype=np.float64)
    biases = np.asarray(biases, dtype=np.float64)
    counts = np.zeros(weights.shape[0], dtype=np.int64)
    for pts in _noisy_chunks(seed, sample_id, sigma, phase, x, n):
        labels = np.argmax(pts @ weights.T + biases, axis=1)
        counts += np.bincount(labels, minlength=counts.size)
    return counts


def count_votes_grid(seed: int, sample_id: int, sigma: float, phase: int,
                     x, boundaries, labels_flat, strides, num_classes: int,
                     n: int) -> np.ndarray:
    """Vote histogram of an axis-aligned cell lookup over n noisy evaluations.

    Cell index along axis d is the number of boundaries <= coordinate
    (boundary points belong to the upper cell).
    """
    labels_flat = np.asarray(labels_flat, dtype=np.int64)
    strides = np.asarray(strides, dtype=np.int64)
    counts = np.zeros(num_classes, dtype=np.int64)
    for pts in _noisy_chunks(seed, sample_id, sigma, phase, x, n):
        flat = np.zeros(pts.shape[0], dtype=np.int64)
        for d, bnds in enumerate(boundaries):
            flat += strides[d] * np.searchsorted(bnds, pts[:, d], side="right")
        counts += np.bincount(labels_flat[flat], minlength=num_classes)
    return counts
