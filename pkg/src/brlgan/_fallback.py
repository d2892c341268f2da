"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def matmul_ordered(a, b):
    m, k = a.shape
    n = b.shape[1]
    if k == 0:
        return np.zeros((m, n))
    # accumulate over k left to right, one rank-1 update per step
    out = np.multiply.outer(a[:, 0], b[0])
    for p in range(1, k):
        out += np.multiply.outer(a[:, p], b[p])
    return out


def singular_values(m, max_sweeps=60, eps=np.finfo(np.float64).eps):
    """One-sided Hestenes-Jacobi; returns singular values in descending order."""
    a = np.array(m, dtype=np.float64, copy=True)
    if a.shape[1] > a.shape[0]:
        a = a.T
    w = np.ascontiguousarray(a.T)
    cols = w.shape[0]
    for _ in range(max_sweeps):
        off = 0.0
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = float(w[p] @ w[p])
                beta = float(w[q] @ w[q])
                gamma = float(w[p] @ w[q])
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= eps * np.sqrt(alpha * beta):
                    continue
                off = max(off, abs(gamma) / np.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                sign = 1.0 if zeta >= 0.0 else -1.0
                t = sign / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp = w[p].copy()
                w[p] = c * wp - s * w[q]
                w[q] = s * wp + c * w[q]
        if off == 0.0:
            break
    sv = np.sqrt(np.einsum("ij,ij->i", w, w))
    return np.sort(sv)[::-1].copy()


def im2col(x, kh, kw, stride, pad):
    bsz, h, wd, ch = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.empty((bsz, ho, wo, kh, kw, ch))
    for ky in range(kh):
        for kx in range(kw):
            out[:, :, :, ky, kx, :] = xp[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride, :]
    return out.reshape(bsz * ho * wo, kh * kw * ch)


def col2im(cols, bsz, h, wd, ch, kh, kw, stride, pad):
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    c6 = cols.reshape(bsz, ho, wo, kh, kw, ch)
    out = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, ch))
    for ky in range(kh):
        for kx in range(kw):
            out[:, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride, :] += c6[:, :, :, ky, kx, :]
    return np.ascontiguousarray(out[:, pad:pad + h, pad:pad + wd, :])
