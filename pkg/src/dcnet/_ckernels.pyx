# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for convolution unfolding, band sums and max pooling."""
import numpy as np
cimport numpy as cnp
from libc.string cimport memcpy

cnp.import_array()


def im2col(double[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t dilation, Py_ssize_t ho, Py_ssize_t wo):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n * ho * wo, kh * kw * c), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t b, y, x, i, j, row, col
    cdef size_t nbytes = c * sizeof(double)
    with nogil:
        row = 0
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    col = 0
                    for i in range(kh):
                        for j in range(kw):
                            memcpy(&o[row, col], &xp[b, y * stride + i * dilation, x * stride + j * dilation, 0], nbytes)
                            col += c
                    row += 1
    return out


def col2im(double[:, ::1] cols, tuple xp_shape, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t stride, Py_ssize_t dilation, Py_ssize_t ho, Py_ssize_t wo):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros(xp_shape, dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t n = o.shape[0], c = o.shape[3]
    cdef Py_ssize_t b, y, x, i, j, k, row, col, yy, xx
    with nogil:
        row = 0
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    col = 0
                    for i in range(kh):
                        yy = y * stride + i * dilation
                        for j in range(kw):
                            xx = x * stride + j * dilation
                            for k in range(c):
                                o[b, yy, xx, k] += cols[row, col + k]
                            col += c
                    row += 1
    return out


def band_sum(double[:, :, ::1] a, Py_ssize_t tau):
    cdef Py_ssize_t nb = a.shape[0], m = a.shape[1], nk = a.shape[2]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.zeros((nb, m, nk), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t b, p, q, k, lo, hi
    with nogil:
        for b in range(nb):
            for p in range(m):
                lo = p - tau if p > tau else 0
                hi = p + tau if p + tau < m - 1 else m - 1
                for q in range(lo, hi + 1):
                    for k in range(nk):
                        o[b, p, k] += a[b, q, k]
    return out


def maxpool_forward(double[:, :, :, ::1] x, Py_ssize_t k):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t ho = h // k, wo = w // k
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.empty((n, ho, wo, c), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=4] arg = np.empty((n, ho, wo, c), dtype=np.int64)
    cdef double[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] ag = arg
    cdef Py_ssize_t b, y, xx, ch, i, j, best
    cdef double v, bv
    with nogil:
        for b in range(n):
            for y in range(ho):
                for xx in range(wo):
                    for ch in range(c):
                        bv = x[b, y * k, xx * k, ch]
                        best = 0
                        for i in range(k):
                            for j in range(k):
                                v = x[b, y * k + i, xx * k + j, ch]
                                if v > bv:
                                    bv = v
                                    best = i * k + j
                        o[b, y, xx, ch] = bv
                        ag[b, y, xx, ch] = best
    return out, arg


def maxpool_backward(double[:, :, :, ::1] g, cnp.int64_t[:, :, :, ::1] arg, Py_ssize_t k, tuple shape):
    cdef cnp.ndarray[cnp.float64_t, ndim=4] out = np.zeros(shape, dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    cdef Py_ssize_t n = g.shape[0], ho = g.shape[1], wo = g.shape[2], c = g.shape[3]
    cdef Py_ssize_t b, y, xx, ch, a
    with nogil:
        for b in range(n):
            for y in range(ho):
                for xx in range(wo):
                    for ch in range(c):
                        a = arg[b, y, xx, ch]
                        o[b, y * k + a // k, xx * k + a % k, ch] = g[b, y, xx, ch]
    return out
