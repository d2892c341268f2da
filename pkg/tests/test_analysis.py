import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brlgan.analysis import (DegenerateInputError, EquivalenceReport, film_to_bilinear_matrix,
                             numerical_rank, verify_film_equivalence)
from brlgan.conditioning import FiLMParams, film_condition
from brlgan.tensor import ParameterError, Rng


def test_zero_bias_weights_give_outer_product():
    rng = np.random.default_rng(0)
    p = FiLMParams(rng.normal(size=(4, 3)), rng.normal(size=(5, 3)), np.zeros((5, 3)))
    W = film_to_bilinear_matrix(p, 1, rng.normal(size=4))
    np.testing.assert_array_equal(W, np.outer(p.W_f[:, 1], p.W_gain[:, 1]))
    assert numerical_rank(W) <= 1


def test_hand_constructed_instance():
    p = FiLMParams(np.array([[1.0], [1.0]]), np.array([[2.0]]), np.array([[1.0]]))
    f = np.array([1.0, 2.0])
    W = film_to_bilinear_matrix(p, 0, f)
    # pivot is index 1 (|2| is largest); row 1 gains w_c / 2
    np.testing.assert_array_equal(W, [[2.0], [2.5]])
    for c in (-1.0, 0.0, 1.0, 2.0):
        assert f @ W @ np.array([c]) == film_condition(p, f, np.array([c]))[0]


def test_pivot_is_largest_magnitude_lowest_index():
    p = FiLMParams(np.ones((3, 1)), np.ones((2, 1)), np.array([[4.0], [8.0]]))
    W = film_to_bilinear_matrix(p, 0, np.array([-2.0, 2.0, 1.0]))
    np.testing.assert_array_equal(W[0], [1.0 - 2.0, 1.0 - 4.0])
    np.testing.assert_array_equal(W[1:], 1.0)


def test_all_zero_feature_rejected():
    p = FiLMParams.init(Rng(0), 3, 2, 2)
    with pytest.raises(DegenerateInputError):
        film_to_bilinear_matrix(p, 0, np.zeros(3))


def test_brute_force_over_conditions():
    rng = np.random.default_rng(11)
    p = FiLMParams(rng.normal(size=(6, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    f = rng.normal(size=6)
    for i in range(4):
        W = film_to_bilinear_matrix(p, i, f)
        for c in rng.normal(size=(100, 3)):
            assert abs(f @ W @ c - film_condition(p, f, c)[i]) <= 1e-12
        assert numerical_rank(W) <= 2


def test_numerical_rank_examples():
    assert numerical_rank(np.zeros((3, 3)), 1e-10) == 0
    assert numerical_rank(np.eye(4), 1e-10) == 4
    assert numerical_rank(np.outer([1.0, 2.0], [3.0, 4.0]), 1e-10) == 1


def test_numerical_rank_errors():
    with pytest.raises(ParameterError):
        numerical_rank(np.zeros((0, 3)))
    with pytest.raises(ParameterError):
        numerical_rank(np.eye(2), tol=0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(0, 6))
def test_numerical_rank_invariances(seed, m, n, r):
    rng = np.random.default_rng(seed)
    r = min(r, m, n)
    M = rng.normal(size=(m, r)) @ rng.normal(size=(r, n)) if r else np.zeros((m, n))
    k = numerical_rank(M)
    assert k == r == np.linalg.matrix_rank(M)
    assert numerical_rank(M[rng.permutation(m)][:, rng.permutation(n)]) == k
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    assert numerical_rank(Q @ M) == k


def test_verify_random_params_pass():
    p = FiLMParams.init(Rng(3), 8, 4, 6, std=1.0)
    report = verify_film_equivalence(p, 100, Rng(4))
    assert report.passed
    assert report.max_deviation <= 1e-9
    assert len(report.ranks) == 600 and max(report.ranks) <= 2


def test_verify_zero_params():
    p = FiLMParams(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros((4, 2)))
    report = verify_film_equivalence(p, 5, Rng(0))
    assert report.max_deviation == 0.0 and set(report.ranks) == {0}


def test_verify_scalar_case_exact():
    p = FiLMParams(np.array([[1.5]]), np.array([[-2.0]]), np.array([[0.7]]))
    report = verify_film_equivalence(p, 20, Rng(1))
    assert report.passed and max(report.ranks) <= 1


def test_verify_rejects_zero_trials():
    with pytest.raises(ParameterError):
        verify_film_equivalence(FiLMParams.init(Rng(0), 2, 2, 2), 0, Rng(0))


def test_report_pass_logic():
    assert EquivalenceReport(0.0, [0, 1, 2]).passed
    assert not EquivalenceReport(0.0, [3]).passed
    assert not EquivalenceReport(1e-6, [1]).passed
    merged = EquivalenceReport(1e-12, [1]).merge(EquivalenceReport(1e-11, [2]))
    assert merged.max_deviation == 1e-11 and merged.ranks == [1, 2]
