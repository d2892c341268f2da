"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``BRLGAN_PURE_PYTHON=1`` to force the fallback.
"""

import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("BRLGAN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul_ordered(a, b):
    return _impl.matmul_ordered(_c(a), _c(b))


def singular_values(m, max_sweeps=60):
    return _impl.singular_values(_c(m), max_sweeps)


def im2col(x, kh, kw, stride, pad):
    return _impl.im2col(_c(x), kh, kw, stride, pad)


def col2im(cols, shape, kh, kw, stride, pad):
    bsz, h, w, ch = shape
    return _impl.col2im(_c(cols), bsz, h, w, ch, kh, kw, stride, pad)
