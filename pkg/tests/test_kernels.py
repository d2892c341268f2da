import os

import numpy as np
import pytest

from brlgan import _fallback, kernels

compiled = pytest.importorskip("brlgan._kernels")


@pytest.mark.skipif(os.environ.get("BRLGAN_PURE_PYTHON") in ("1", "true", "yes"),
                    reason="fallback forced")
def test_backend_reports_compiled():
    assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("shape", [(1, 1, 1), (5, 7, 3), (16, 1, 9), (4, 33, 2)])
def test_matmul_bit_identical(shape):
    m, k, n = shape
    rng = np.random.default_rng(sum(shape))
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    np.testing.assert_array_equal(compiled.matmul_ordered(a, b), _fallback.matmul_ordered(a, b))
    np.testing.assert_allclose(compiled.matmul_ordered(a, b), a @ b, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("shape", [(1, 1), (4, 4), (7, 3), (3, 7), (12, 5)])
def test_singular_values_match_lapack(shape):
    rng = np.random.default_rng(shape[0] * 10 + shape[1])
    m = rng.normal(size=shape)
    ref = np.linalg.svd(m, compute_uv=False)
    np.testing.assert_allclose(compiled.singular_values(m), ref, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(_fallback.singular_values(m), ref, rtol=1e-12, atol=1e-13)


def test_singular_values_rank_deficient():
    u, v = np.arange(1.0, 6.0), np.arange(2.0, 6.0)
    m = np.outer(u, v)
    sv = compiled.singular_values(m)
    assert sv[0] == pytest.approx(np.linalg.norm(u) * np.linalg.norm(v), rel=1e-14)
    assert np.all(sv[1:] <= 1e-14 * sv[0])


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (3, 2, 1), (2, 2, 0), (4, 1, 0)])
def test_im2col_col2im_bit_identical(k, stride, pad):
    rng = np.random.default_rng(k + stride + pad)
    x = rng.normal(size=(2, 8, 8, 3))
    c1, c2 = compiled.im2col(x, k, k, stride, pad), _fallback.im2col(x, k, k, stride, pad)
    np.testing.assert_array_equal(c1, c2)
    g = rng.normal(size=c1.shape)
    np.testing.assert_array_equal(compiled.col2im(g, 2, 8, 8, 3, k, k, stride, pad),
                                  _fallback.col2im(g, 2, 8, 8, 3, k, k, stride, pad))


def test_col2im_is_adjoint_of_im2col():
    # <im2col(x), g> == <x, col2im(g)>
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 6, 6, 4))
    cols = kernels.im2col(x, 3, 3, 2, 1)
    g = rng.normal(size=cols.shape)
    lhs = np.sum(cols * g)
    rhs = np.sum(x * kernels.col2im(g, x.shape, 3, 3, 2, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)
