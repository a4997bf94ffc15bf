# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: kernel blocks, kernel expansions, signed row scatter.

Every output entry is computed with a fixed, shape-independent summation
order, so a row block of a Gram matrix is bit-identical to the same rows
sliced out of the full matrix.
"""
import numpy as np

from libc.math cimport exp, fmin, pow

# kernel codes shared with sketchkm._backend
cdef enum:
    GAUSSIAN = 0
    POLYNOMIAL = 1
    SOBOLEV = 2


cdef inline double _kval(int code, const double* a, const double* b,
                         Py_ssize_t q, double param, int degree) noexcept nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0
    cdef double diff
    if code == GAUSSIAN:
        for k in range(q):
            diff = a[k] - b[k]
            acc = acc + diff * diff
        return exp(-acc * param)
    elif code == POLYNOMIAL:
        for k in range(q):
            acc = acc + a[k] * b[k]
        return pow(acc + param, degree)
    else:
        return 1.0 + fmin(a[0], b[0])


def cross_kernel(int code, const double[:, ::1] A, const double[:, ::1] B,
                 double param, int degree):
    """Return the |A| x |B| kernel block k(A_i, B_j)."""
    cdef Py_ssize_t m = A.shape[0], n = B.shape[0], q = A.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(m):
            for j in range(n):
                o[i, j] = _kval(code, &A[i, 0], &B[j, 0], q, param, degree)
    return out


def kernel_expansion(int code, const double[:, ::1] A, const double[:, ::1] B,
                     const double[:, ::1] beta, double param, int degree):
    """Return sum_j k(A_i, B_j) beta[j, :] for every row of A, without
    materializing the kernel block."""
    cdef Py_ssize_t m = A.shape[0], n = B.shape[0], q = A.shape[1]
    cdef Py_ssize_t d = beta.shape[1]
    out = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, t
    cdef double kv
    with nogil:
        for i in range(m):
            for j in range(n):
                kv = _kval(code, &A[i, 0], &B[j, 0], q, param, degree)
                for t in range(d):
                    o[i, t] = o[i, t] + kv * beta[j, t]
    return out


def signed_scatter_rows(const double[:, ::1] src, const long long[::1] rows,
                        const double[::1] signs, double[:, ::1] out):
    """In place: out[rows[j], :] += signs[j] * src[j, :], j in order."""
    cdef Py_ssize_t n = src.shape[0], k = src.shape[1]
    cdef Py_ssize_t j, c, r
    cdef double sg
    with nogil:
        for j in range(n):
            r = rows[j]
            sg = signs[j]
            for c in range(k):
                out[r, c] = out[r, c] + sg * src[j, c]
