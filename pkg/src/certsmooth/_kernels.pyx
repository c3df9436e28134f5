# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled vote-counting kernels.

Fuses noise generation, classification and counting into one pass over the
Philox stream, so no (n, dim) matrix is ever materialized.  Must stay bit-
identical to ``_kernels_py``: same uniform consumption order, same 2**-53
clamp, same Cephes ndtri, first-maximum argmax.
"""

from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.stdlib cimport free, malloc

import numpy as np

cimport numpy as cnp
from numpy.random cimport bitgen_t
from scipy.special.cython_special cimport ndtri

from .rng import MIN_UNIFORM, make_bit_generator

cnp.import_array()

BACKEND_NAME = "cython"

cdef const char* _CAPSULE_NAME = "BitGenerator"

cdef double _MIN_U = MIN_UNIFORM


cdef inline double _next_normal(bitgen_t* rng) noexcept nogil:
    cdef double u = rng.next_double(rng.state)
    if u < _MIN_U:
        u = _MIN_U
    return ndtri(u)


cdef bitgen_t* _bitgen_from(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    if not PyCapsule_IsValid(capsule, _CAPSULE_NAME):
        raise ValueError("invalid BitGenerator capsule")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, _CAPSULE_NAME)


def standard_normal_rows(seed, sample_id, sigma, phase, Py_ssize_t n, Py_ssize_t dim):
    bg = make_bit_generator(seed, sample_id, sigma, phase)
    cdef bitgen_t* rng = _bitgen_from(bg)
    out = np.empty((n, dim), dtype=np.float64)
    cdef double[:, ::1] z = out
    cdef Py_ssize_t i, j
    with bg.lock, nogil:
        for i in range(n):
            for j in range(dim):
                z[i, j] = _next_normal(rng)
    return out


def count_votes_linear(seed, sample_id, double sigma, phase,
                       x, weights, biases, Py_ssize_t n):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(biases, dtype=np.float64)
    cdef Py_ssize_t dim = xv.shape[0]
    cdef Py_ssize_t num_classes = w.shape[0]
    out = np.zeros(num_classes, dtype=np.int64)
    cdef long long[::1] counts = out

    bg = make_bit_generator(seed, sample_id, sigma, phase)
    cdef bitgen_t* rng = _bitgen_from(bg)
    cdef double* pt = <double*> malloc(dim * sizeof(double))
    if pt == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, j, c, best
    cdef double score, best_score
    try:
        with bg.lock, nogil:
            for i in range(n):
                for j in range(dim):
                    pt[j] = xv[j] + sigma * _next_normal(rng)
                best = 0
                best_score = b[0]
                for j in range(dim):
                    best_score += w[0, j] * pt[j]
                for c in range(1, num_classes):
                    score = b[c]
                    for j in range(dim):
                        score += w[c, j] * pt[j]
                    if score > best_score:
                        best_score = score
                        best = c
                counts[best] += 1
    finally:
        free(pt)
    return out


def count_votes_grid(seed, sample_id, double sigma, phase,
                     x, boundaries, labels_flat, strides, Py_ssize_t num_classes,
                     Py_ssize_t n):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t dim = xv.shape[0]
    # Ragged per-axis boundaries packed into one padded matrix.
    cdef Py_ssize_t max_len = 0
    for bnds in boundaries:
        max_len = max(max_len, len(bnds))
    packed_np = np.full((dim, max(max_len, 1)), np.inf, dtype=np.float64)
    lens_np = np.empty(dim, dtype=np.int64)
    for axis, bnds in enumerate(boundaries):
        lens_np[axis] = len(bnds)
        packed_np[axis, :len(bnds)] = bnds
    cdef double[:, ::1] packed = packed_np
    cdef long long[::1] lens = lens_np
    cdef long long[::1] lab = np.ascontiguousarray(labels_flat, dtype=np.int64)
    cdef long long[::1] strd = np.ascontiguousarray(strides, dtype=np.int64)
    out = np.zeros(num_classes, dtype=np.int64)
    cdef long long[::1] counts = out

    bg = make_bit_generator(seed, sample_id, sigma, phase)
    cdef bitgen_t* rng = _bitgen_from(bg)
    cdef Py_ssize_t i, j
    cdef long long flat, lo, hi, mid
    cdef double v
    with bg.lock, nogil:
        for i in range(n):
            flat = 0
            for j in range(dim):
                v = xv[j] + sigma * _next_normal(rng)
                # bisect_right: boundary coordinates fall in the upper cell
                lo = 0
                hi = lens[j]
                while lo < hi:
                    mid = (lo + hi) >> 1
                    if packed[j, mid] <= v:
                        lo = mid + 1
                    else:
                        hi = mid
                flat += strd[j] * lo
            counts[lab[flat]] += 1
    return out
