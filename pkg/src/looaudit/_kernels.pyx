# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels.

Every reduction runs sequentially over the inner index, in the same order as
:mod:`looaudit._kernels_py`, so the two backends agree bit for bit.
"""

import numpy as np


def gemm(const double[:, ::1] a, const double[:, ::1] b):
    """Return ``a @ b`` accumulated as ``c[i, j] += a[i, k] * b[k, j]`` for k ascending."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = a.shape[1]
    cdef Py_ssize_t p = b.shape[1]
    if b.shape[0] != m:
        raise ValueError(f"gemm: inner dimensions differ ({m} vs {b.shape[0]})")
    out = np.zeros((n, p), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, k
    cdef double aik
    with nogil:
        for i in range(n):
            for k in range(m):
                aik = a[i, k]
                for j in range(p):
                    c[i, j] = c[i, j] + aik * b[k, j]
    return out


def sq_dists(const double[:, ::1] x, const double[:, ::1] y):
    """Pairwise squared Euclidean distances, summed over features in order."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t m = y.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    if y.shape[1] != d:
        raise ValueError(f"sq_dists: feature dimensions differ ({d} vs {y.shape[1]})")
    out = np.zeros((n, m), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, j, k
    cdef double diff, acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = x[i, k] - y[j, k]
                    acc = acc + diff * diff
                c[i, j] = acc
    return out
