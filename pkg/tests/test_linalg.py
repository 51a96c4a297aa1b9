import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vamuon.errors import DegenerateInputError, DimensionLimitError, NonFiniteError, ZeroInputError
from vamuon.linalg import (
    NS_COEFFS,
    NS_COEFFS_CLASSIC,
    NS_COEFFS_JORDAN,
    newton_schulz,
    polar_factor_exact,
    svd_small,
)


def orthogonal(n, seed):
    q, r = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, n)))
    return q * np.sign(np.diag(r))


# -- svd_small -----------------------------------------------------------------------------


def test_svd_identity():
    r = svd_small(np.eye(3))
    np.testing.assert_allclose(r.singular_values, [1, 1, 1], atol=1e-15)
    np.testing.assert_allclose(r.U, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(r.V, np.eye(3), atol=1e-15)


def test_svd_diagonal():
    r = svd_small(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(r.singular_values, [3.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("shape", [(8, 5), (5, 8), (1, 7), (7, 1), (12, 12), (40, 3)])
def test_svd_matches_lapack(shape):
    A = np.random.default_rng(1).standard_normal(shape)
    r = svd_small(A)
    ref = np.linalg.svd(A, compute_uv=False)
    np.testing.assert_allclose(r.singular_values, ref, rtol=1e-12, atol=1e-13)
    assert np.linalg.norm(r.reconstruct() - A) / np.linalg.norm(A) <= 1e-9
    k = min(shape)
    np.testing.assert_allclose(r.U.T @ r.U, np.eye(k), atol=1e-12)
    np.testing.assert_allclose(r.V.T @ r.V, np.eye(k), atol=1e-12)


def test_svd_rank_deficient_still_orthonormal():
    A = np.outer(np.arange(1.0, 7.0), np.arange(1.0, 5.0))
    r = svd_small(A)
    assert r.singular_values[1] < 1e-12 * r.singular_values[0]
    np.testing.assert_allclose(r.U.T @ r.U, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(r.reconstruct(), A, atol=1e-12)


def test_svd_sorted_descending_and_deterministic():
    A = np.random.default_rng(2).standard_normal((9, 6))
    a, b = svd_small(A), svd_small(A.copy())
    assert np.all(np.diff(a.singular_values) <= 0)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.singular_values, b.singular_values)


def test_svd_errors():
    with pytest.raises(NonFiniteError):
        svd_small(np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        svd_small(np.ones(3))
    with pytest.raises(DimensionLimitError):
        svd_small(np.zeros((513, 513)))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(-1e3, 1e3)))
def test_svd_reconstruction_property(A):
    r = svd_small(A)
    scale = max(np.linalg.norm(A), 1e-300)
    assert np.linalg.norm(r.reconstruct() - A) / scale <= 1e-9
    assert np.all(r.singular_values >= 0)


# -- polar_factor_exact -----------------------------------------------------------------------


def test_polar_positive_diagonal():
    np.testing.assert_allclose(polar_factor_exact(np.diag([2.0, 0.5])), np.eye(2), atol=1e-14)


def test_polar_of_orthogonal_is_itself():
    Q = orthogonal(5, 3)
    np.testing.assert_allclose(polar_factor_exact(Q), Q, atol=1e-12)


def test_polar_rotation_example():
    out = polar_factor_exact(np.array([[0.0, -2.0], [3.0, 0.0]]))
    np.testing.assert_allclose(out, [[0.0, -1.0], [1.0, 0.0]], atol=1e-14)


@pytest.mark.parametrize("shape", [(7, 4), (4, 7)])
def test_polar_orthonormality(shape):
    O = polar_factor_exact(np.random.default_rng(4).standard_normal(shape))
    gram = O.T @ O if shape[0] >= shape[1] else O @ O.T
    np.testing.assert_allclose(gram, np.eye(min(shape)), atol=1e-9)


def test_polar_matches_lapack_oracle():
    A = np.random.default_rng(5).standard_normal((6, 4))
    U, _, Vt = np.linalg.svd(A, full_matrices=False)
    np.testing.assert_allclose(polar_factor_exact(A), U @ Vt, atol=1e-12)


def test_polar_degenerate():
    with pytest.raises(DegenerateInputError):
        polar_factor_exact(np.diag([1.0, 1e-14]))
    with pytest.raises(DegenerateInputError):
        polar_factor_exact(np.zeros((3, 3)))


# -- newton_schulz -------------------------------------------------------------------------------


def test_default_coefficients():
    assert NS_COEFFS == NS_COEFFS_JORDAN == (3.4445, -4.7750, 2.0315)


def test_zero_input():
    with pytest.raises(ZeroInputError):
        newton_schulz(np.zeros((3, 4)))


def test_classic_fixed_points():
    np.testing.assert_allclose(newton_schulz(np.eye(4), coeffs=NS_COEFFS_CLASSIC), np.eye(4), atol=1e-6)
    Q = orthogonal(6, 7)
    np.testing.assert_allclose(newton_schulz(Q, coeffs=NS_COEFFS_CLASSIC), Q, atol=1e-6)


def test_classic_diag31():
    out = newton_schulz(np.diag([3.0, 1.0]), coeffs=NS_COEFFS_CLASSIC)
    np.testing.assert_allclose(out, polar_factor_exact(np.diag([3.0, 1.0])), atol=0.05)


def test_jordan_on_orthogonal_and_diag_inputs_stays_in_band():
    # the default coefficients oscillate around 1 instead of converging to it
    for A in (np.eye(4), orthogonal(6, 8), np.diag([3.0, 1.0])):
        sv = np.linalg.svd(newton_schulz(A), compute_uv=False)
        assert sv.min() >= 0.6 and sv.max() <= 1.4


@pytest.mark.parametrize("shape", [(3, 9), (9, 3), (5, 5), (1, 6), (6, 1)])
def test_orientation_preserved(shape):
    A = np.random.default_rng(9).standard_normal(shape)
    out = newton_schulz(A)
    assert out.shape == shape
    np.testing.assert_allclose(newton_schulz(A.T), out.T, atol=1e-14)


def test_scale_invariance_exact():
    A = np.random.default_rng(10).standard_normal((7, 5))
    base = newton_schulz(A)
    for c in (1e-3, 2.0, 10.0, 1e6):
        assert np.max(np.abs(newton_schulz(c * A) - base)) <= 1e-12


def test_sign_flip_equivariance():
    A = np.random.default_rng(11).standard_normal((4, 6))
    np.testing.assert_allclose(newton_schulz(-A), -newton_schulz(A), atol=1e-14)


def test_float32_kept():
    A = np.random.default_rng(12).standard_normal((4, 4)).astype(np.float32)
    assert newton_schulz(A).dtype == np.float32


def test_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        newton_schulz(np.array([[np.inf, 1.0]]))


def test_more_steps_classic_converges():
    A = np.random.default_rng(13).standard_normal((8, 8)) + 3 * np.eye(8)
    out = newton_schulz(A, steps=30, coeffs=NS_COEFFS_CLASSIC)
    np.testing.assert_allclose(out, polar_factor_exact(A), atol=1e-8)
