# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled matrix-multiply kernels with a pinned reduction order.

Thin wrapper over the C cores in _mmcore.c; see that file for the
ordering guarantee.
"""

import numpy as np


cdef extern from "_mmcore.h":
    void pifi_mm_f32(const float *a, const float *b, float *out,
                     Py_ssize_t m, Py_ssize_t k, Py_ssize_t n) nogil
    void pifi_mm_f64(const double *a, const double *b, double *out,
                     Py_ssize_t m, Py_ssize_t k, Py_ssize_t n) nogil


def mm2(a, b):
    """(m, k) @ (k, n) for float32/float64 C-contiguous arrays."""
    out = np.zeros((a.shape[0], b.shape[1]), dtype=a.dtype)
    if out.size and a.shape[1]:
        _dispatch(a, b, out, a.shape[0], a.shape[1], b.shape[1])
    return out


def mm3(a, b):
    """Batched (B, m, k) @ (B, k, n) for float32/float64 C-contiguous arrays."""
    out = np.zeros((a.shape[0], a.shape[1], b.shape[2]), dtype=a.dtype)
    if out.size and a.shape[2]:
        if a.dtype == np.float32:
            _mm3_f32(a, b, out)
        else:
            _mm3_f64(a, b, out)
    return out


def _dispatch(a, b, out, Py_ssize_t m, Py_ssize_t k, Py_ssize_t n):
    cdef const float[:, ::1] af
    cdef const float[:, ::1] bf
    cdef float[:, ::1] of
    cdef const double[:, ::1] ad
    cdef const double[:, ::1] bd
    cdef double[:, ::1] od
    if a.dtype == np.float32:
        af, bf, of = a, b, out
        with nogil:
            pifi_mm_f32(&af[0, 0], &bf[0, 0], &of[0, 0], m, k, n)
    else:
        ad, bd, od = a, b, out
        with nogil:
            pifi_mm_f64(&ad[0, 0], &bd[0, 0], &od[0, 0], m, k, n)


def _mm3_f32(const float[:, :, ::1] a, const float[:, :, ::1] b, float[:, :, ::1] out):
    cdef Py_ssize_t nb = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2]
    cdef Py_ssize_t t
    with nogil:
        for t in range(nb):
            pifi_mm_f32(&a[t, 0, 0], &b[t, 0, 0], &out[t, 0, 0], m, k, n)


def _mm3_f64(const double[:, :, ::1] a, const double[:, :, ::1] b, double[:, :, ::1] out):
    cdef Py_ssize_t nb = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2]
    cdef Py_ssize_t t
    with nogil:
        for t in range(nb):
            pifi_mm_f64(&a[t, 0, 0], &b[t, 0, 0], &out[t, 0, 0], m, k, n)
