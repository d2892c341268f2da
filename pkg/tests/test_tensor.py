import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from brlgan.tensor import (DimensionError, ParameterError, Rng, dumps, gaussian_init, hadamard,
                           load_tensor, loads, matmul, save_tensor, splitmix64, tile)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(a, np.eye(2)), a)


def test_matmul_hand_value():
    # 1*3 + 2*4
    assert matmul([[1.0, 2.0]], [[3.0], [4.0]]).tolist() == [[11.0]]


def test_matmul_zero():
    out = matmul(np.zeros((2, 3)), np.arange(12.0).reshape(3, 4))
    np.testing.assert_array_equal(out, np.zeros((2, 4)))


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_matmul_is_sequential_over_k():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 4))
    expected = np.zeros((5, 4))
    for i in range(5):
        for j in range(4):
            acc = a[i, 0] * b[0, j]
            for k in range(1, 7):
                acc = acc + a[i, k] * b[k, j]
            expected[i, j] = acc
    np.testing.assert_array_equal(matmul(a, b), expected)


def test_matmul_output_is_read_only():
    out = matmul(np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        out[0, 0] = 5.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32))
def test_matmul_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
    left, right = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
    np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-12 * np.abs(left).max())


@pytest.mark.parametrize("a,b,expected", [
    ([1, 2, 3], [1, 1, 1], [1, 2, 3]),
    ([1, 2], [3, 4], [3, 8]),
    ([5, 6], [0, 0], [0, 0]),
])
def test_hadamard_examples(a, b, expected):
    assert hadamard(a, b).tolist() == expected


def test_hadamard_shape_mismatch():
    with pytest.raises(DimensionError):
        hadamard([1.0, 2.0], [1.0, 2.0, 3.0])


small_ints = st.integers(-10**5, 10**5).map(float)


# IEEE products are only exactly associative when no rounding occurs, so the
# exact check runs on integers whose triple products fit in 53 bits
@given(hnp.arrays(np.float64, (3, 4), elements=small_ints),
       hnp.arrays(np.float64, (3, 4), elements=small_ints),
       hnp.arrays(np.float64, (3, 4), elements=small_ints))
def test_hadamard_associative_exactly(a, b, c):
    np.testing.assert_array_equal(hadamard(hadamard(a, b), c), hadamard(a, hadamard(b, c)))


@settings(max_examples=50)
@given(st.integers(0, 2**32))
def test_hadamard_associative_to_rounding(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 3, 4))
    np.testing.assert_allclose(hadamard(hadamard(a, b), c), hadamard(a, hadamard(b, c)),
                               rtol=4e-16, atol=0)


def test_tile_adds_leading_axes():
    out = tile([1.0, 2.0], (2, 3))
    assert out.shape == (2, 3, 2)
    assert np.all(out[1, 2] == [1.0, 2.0])
    with pytest.raises(ParameterError):
        tile([1.0], (0,))


def test_gaussian_init_deterministic():
    a = gaussian_init(Rng(42), [4], 0.02)
    b = gaussian_init(Rng(42), [4], 0.02)
    np.testing.assert_array_equal(a, b)


def test_gaussian_init_mean():
    # 5 sigma of the sample-mean estimator is 5 / sqrt(1e5) ~ 0.0158
    x = gaussian_init(Rng(1), [100_000], 1.0)
    assert -0.02 < x.mean() < 0.02


def test_gaussian_init_shape_and_std_error():
    x = gaussian_init(Rng(0), [2, 3], 0.5)
    assert x.shape == (2, 3) and x.size == 6
    with pytest.raises(ParameterError):
        gaussian_init(Rng(0), [2], 0.0)
    with pytest.raises(ParameterError):
        gaussian_init(Rng(0), [2], -1.0)


def test_splitmix_reference_values():
    # published SplitMix64 outputs for seed 1234567
    state, out = 1234567, []
    for _ in range(3):
        state, z = splitmix64(state)
        out.append(z)
    assert out == [6457827717110365317, 3203168211198807973, 9817491932198370423]


def test_rng_children_are_independent_and_stable():
    r = Rng(5)
    a = r.child(1).normal(3)
    b = Rng(5).child(1).normal(3)
    c = r.child(2).normal(3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_rng_rejects_bad_seed():
    with pytest.raises(ParameterError):
        Rng(-1)
    with pytest.raises(ParameterError):
        Rng(2**64)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=4, min_side=1, max_side=4),
                  elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_serialization_round_trip_bit_exact(a):
    b = loads(dumps(a))
    assert b.shape == a.shape
    assert b.tobytes() == np.ascontiguousarray(a).tobytes()


def test_serialization_header_layout(tmp_path):
    t = np.arange(6.0).reshape(2, 3)
    save_tensor(tmp_path / "x.ten", t)
    raw = (tmp_path / "x.ten").read_bytes()
    assert raw[:4] == b"TEN\x01"
    assert int.from_bytes(raw[4:12], "little") == 2
    assert int.from_bytes(raw[12:20], "little") == 2
    assert int.from_bytes(raw[20:28], "little") == 3
    assert len(raw) == 28 + 6 * 8
    np.testing.assert_array_equal(load_tensor(tmp_path / "x.ten"), t)


def test_loads_rejects_garbage():
    with pytest.raises(ValueError):
        loads(b"nope")
    with pytest.raises(ValueError):
        loads(dumps(np.zeros(3))[:-8])
