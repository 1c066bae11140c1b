import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qaface.numerics import (
    EPS_ACOS,
    DimensionMismatch,
    ZeroVector,
    angle_between,
    cosine_similarity,
    dot,
    finite_difference_gradient,
    l2_norm,
    make_rng,
    normalize,
    normalize_rows,
    random_unit_vectors,
    relative_error,
    row_norms,
    safe_arccos,
    safe_arccos_grad,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_dot_and_norm_small_cases():
    assert dot(np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0])) == 32.0
    assert l2_norm(np.array([3.0, 4.0])) == 5.0
    with pytest.raises(DimensionMismatch):
        dot(np.ones(2), np.ones(3))


def test_normalize_rejects_zero():
    with pytest.raises(ZeroVector):
        normalize(np.zeros(4))
    with pytest.raises(ZeroVector):
        normalize(np.array([1e-13, 0.0]))


def test_normalize_rows_returns_norms():
    m = np.array([[3.0, 4.0], [0.0, 2.0]])
    u, n = normalize_rows(m)
    np.testing.assert_array_equal(n, [5.0, 2.0])
    np.testing.assert_allclose(u, [[0.6, 0.8], [0.0, 1.0]], rtol=0, atol=1e-15)
    with pytest.raises(ZeroVector):
        normalize_rows(np.array([[1.0, 0.0], [0.0, 0.0]]))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 5, elements=finite))
def test_normalize_gives_unit_norm(v):
    if np.linalg.norm(v) < 1e-6:
        return
    assert abs(np.linalg.norm(normalize(v)) - 1.0) < 1e-12


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 4, elements=finite), arrays(np.float64, 4, elements=finite))
def test_cosine_is_clamped_and_symmetric(a, b):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    c = cosine_similarity(a, b)
    assert -1.0 <= c <= 1.0
    assert c == cosine_similarity(b, a)


def test_cosine_of_parallel_vectors_is_one():
    v = np.array([0.1, 0.7, -0.3])
    assert cosine_similarity(v, 3.0 * v) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity(v, -v) == pytest.approx(-1.0, abs=1e-15)


def test_safe_arccos_clamps_and_zeroes_gradient_outside():
    assert safe_arccos(1.0) == pytest.approx(math.acos(1 - EPS_ACOS))
    assert safe_arccos(-2.0) == pytest.approx(math.acos(-1 + EPS_ACOS))
    assert safe_arccos(0.0) == math.pi / 2
    g = safe_arccos_grad(np.array([0.0, 0.5, 1.0, -1.0]))
    assert g[0] == -1.0
    assert g[1] == pytest.approx(-1.0 / math.sqrt(0.75))
    assert g[2] == 0.0 and g[3] == 0.0


def test_finite_difference_on_quadratic():
    a = np.array([[2.0, 1.0], [1.0, 3.0]])
    x = np.array([0.3, -0.7])
    g = finite_difference_gradient(lambda v: 0.5 * v @ a @ v, x)
    np.testing.assert_allclose(g, a @ x, rtol=1e-9)


def test_finite_difference_keeps_shape_and_input():
    x = np.arange(6.0).reshape(2, 3)
    before = x.copy()
    g = finite_difference_gradient(lambda v: float(np.sum(v ** 2)), x)
    assert g.shape == (2, 3)
    np.testing.assert_allclose(g, 2 * x, atol=1e-8)
    np.testing.assert_array_equal(x, before)
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda v: 0.0, x, h=0.0)


def test_relative_error_definition():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.5])) == pytest.approx(0.2)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_rng_is_reproducible_per_seed_tuple():
    a = make_rng((3, 1, 7)).standard_normal(4)
    b = make_rng((3, 1, 7)).standard_normal(4)
    c = make_rng((3, 1, 8)).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_random_unit_vectors(rng):
    u = random_unit_vectors(rng, 50, 7)
    np.testing.assert_allclose(row_norms(u), 1.0, atol=1e-14)


def test_angle_between():
    assert angle_between(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(math.pi / 2)
