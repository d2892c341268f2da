# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.

Every routine here has a numpy twin in ``_fallback.py`` with the same
signature. ``matmul_ordered``, ``im2col`` and ``col2im`` are bit-identical to
their twins; ``singular_values`` agrees to rounding.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()


def matmul_ordered(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, p
    cdef double acc
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    if k == 0:
        return out
    for i in range(m):
        for j in range(n):
            acc = a[i, 0] * b[0, j]
            for p in range(1, k):
                acc = acc + a[i, p] * b[p, j]
            o[i, j] = acc
    return out


def singular_values(const double[:, ::1] m, int max_sweeps=60, double eps=2.220446049250313e-16):
    """One-sided Hestenes-Jacobi; returns singular values in descending order."""
    cdef Py_ssize_t rows, cols, p, q, r
    cdef double alpha, beta, gamma, zeta, t, c, s, x, y, off
    cdef int sweep
    a_np = np.array(m, dtype=np.float64, copy=True)
    if a_np.shape[1] > a_np.shape[0]:
        a_np = np.ascontiguousarray(a_np.T)
    # columns are rotated in place; work on the transpose so columns are rows
    w_np = np.ascontiguousarray(a_np.T)
    cdef double[:, ::1] w = w_np
    cols = w.shape[0]
    rows = w.shape[1]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for r in range(rows):
                    alpha = alpha + w[p, r] * w[p, r]
                    beta = beta + w[q, r] * w[q, r]
                    gamma = gamma + w[p, r] * w[q, r]
                if alpha == 0.0 or beta == 0.0:
                    continue
                if fabs(gamma) <= eps * sqrt(alpha * beta):
                    continue
                off = max(off, fabs(gamma) / sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for r in range(rows):
                    x = w[p, r]
                    y = w[q, r]
                    w[p, r] = c * x - s * y
                    w[q, r] = s * x + c * y
        if off == 0.0:
            break
    out = np.empty(cols, dtype=np.float64)
    cdef double[::1] sv = out
    for p in range(cols):
        alpha = 0.0
        for r in range(rows):
            alpha = alpha + w[p, r] * w[p, r]
        sv[p] = sqrt(alpha)
    return np.sort(out)[::-1].copy()


def im2col(const double[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t bsz = x.shape[0], h = x.shape[1], wd = x.shape[2], ch = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, oy, ox, ky, kx, c, iy, ix, row, col
    out = np.zeros((bsz * ho * wo, kh * kw * ch), dtype=np.float64)
    cdef double[:, ::1] o = out
    for b in range(bsz):
        for oy in range(ho):
            for ox in range(wo):
                row = (b * ho + oy) * wo + ox
                for ky in range(kh):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for kx in range(kw):
                        ix = ox * stride + kx - pad
                        if ix < 0 or ix >= wd:
                            continue
                        col = (ky * kw + kx) * ch
                        for c in range(ch):
                            o[row, col + c] = x[b, iy, ix, c]
    return out


def col2im(const double[:, ::1] cols, int bsz, int h, int wd, int ch, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, oy, ox, ky, kx, c, iy, ix, ty, tx, row, col
    out = np.zeros((bsz, h, wd, ch), dtype=np.float64)
    cdef double[:, :, :, ::1] o = out
    # gather per input pixel, summing (ky, kx) in ascending order like the fallback
    for b in range(bsz):
        for iy in range(h):
            for ix in range(wd):
                for ky in range(kh):
                    ty = iy + pad - ky
                    if ty < 0 or ty % stride:
                        continue
                    oy = ty // stride
                    if oy >= ho:
                        continue
                    for kx in range(kw):
                        tx = ix + pad - kx
                        if tx < 0 or tx % stride:
                            continue
                        ox = tx // stride
                        if ox >= wo:
                            continue
                        row = (b * ho + oy) * wo + ox
                        col = (ky * kw + kx) * ch
                        for c in range(ch):
                            o[b, iy, ix, c] = o[b, iy, ix, c] + cols[row, col + c]
    return out
