import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracle_dis.numerics import (
    DegenerateVectorError,
    DimensionError,
    activation,
    affine_backward,
    affine_forward,
    cosine_sim,
    finite_difference_gradient,
    mse,
    relative_error,
    rowwise_cosine,
    softmax_cross_entropy,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_affine_forward_examples():
    np.testing.assert_array_equal(affine_forward([[1, 0], [0, 1]], np.eye(2), [0, 0]), [[1, 0], [0, 1]])
    np.testing.assert_array_equal(affine_forward([[1, 2]], [[1], [1]], [3]), [[6]])
    np.testing.assert_array_equal(affine_forward([[0, 0]], np.ones((2, 2)), [5, 7]), [[5, 7]])


def test_affine_forward_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)|\(2, 2\).*\(1, 3\)"):
        affine_forward(np.zeros((1, 3)), np.zeros((2, 2)), np.zeros(2))


def test_affine_backward_examples(rng):
    X, W = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    for g in affine_backward(X, W, np.zeros((3, 2))):
        assert not np.any(g)
    dX, dW, db = affine_backward([[1.0]], [[2.0]], [[1.0]])
    assert dX.tolist() == [[2.0]] and dW.tolist() == [[1.0]] and db.tolist() == [1.0]


def test_affine_backward_matches_finite_differences(rng):
    X, W, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    C = rng.standard_normal((3, 2))
    dX, dW, db = affine_backward(X, W, C)

    def f_of(which):
        def f(v):
            args = {"X": X, "W": W, "b": b}
            args[which] = v.reshape(args[which].shape)
            return float(np.sum(C * affine_forward(args["X"], args["W"], args["b"])))
        return f

    for name, analytic, base in (("X", dX, X), ("W", dW, W), ("b", db, b)):
        fd = finite_difference_gradient(f_of(name), base.ravel())
        assert relative_error(analytic, fd) <= 1e-6


def test_activation_examples():
    y, back = activation("tanh", np.array([[0.0]]))
    assert y[0, 0] == 0.0 and back(np.ones((1, 1)))[0, 0] == 1.0
    y, back = activation("relu", np.array([[-3.0]]))
    assert y[0, 0] == 0.0 and back(np.ones((1, 1)))[0, 0] == 0.0
    X = np.array([[1.5, -2.0]])
    y, back = activation("identity", X)
    np.testing.assert_array_equal(y, X)
    np.testing.assert_array_equal(back(np.ones_like(X)), np.ones_like(X))


@pytest.mark.parametrize("kind", ["tanh", "relu", "identity"])
def test_activation_backward_matches_fd(kind, rng):
    X = rng.standard_normal((2, 3)) + 0.05  # keep relu off its kink
    C = rng.standard_normal((2, 3))
    _, back = activation(kind, X)
    fd = finite_difference_gradient(lambda v: float(np.sum(C * activation(kind, v.reshape(X.shape))[0])), X.ravel())
    assert relative_error(back(C), fd) <= 1e-7


def test_cosine_examples():
    assert cosine_sim([1, 0], [0, 1]).value == 0.0
    same = cosine_sim([3, 4], [3, 4])
    assert same.value == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(same.grad[0], 0.0, atol=1e-15)
    assert cosine_sim([1, 2], [2, 1]).value == pytest.approx(0.8, abs=1e-15)


def test_cosine_degenerate():
    with pytest.raises(DegenerateVectorError):
        cosine_sim([0, 0], [1, 0])
    with pytest.raises(DegenerateVectorError) as info:
        rowwise_cosine([[1.0, 0.0], [0.0, 0.0]], [[1.0, 0.0], [1.0, 1.0]])
    assert info.value.rows == [1]


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite),
       st.floats(0.1, 10), st.floats(0.1, 10))
def test_cosine_properties(a, b, ca, cb):
    if np.linalg.norm(a) < 1e-3 or np.linalg.norm(b) < 1e-3:
        return
    v = cosine_sim(a, b).value
    assert -1.0 - 1e-12 <= v <= 1.0 + 1e-12
    assert cosine_sim(b, a).value == pytest.approx(v, abs=1e-12)
    assert cosine_sim(ca * a, cb * b).value == pytest.approx(v, abs=1e-9)


def test_cosine_gradient_matches_fd(rng):
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    g = cosine_sim(a, b).grad
    fa = finite_difference_gradient(lambda x: cosine_sim(x, b).value, a)
    fb = finite_difference_gradient(lambda x: cosine_sim(a, x).value, b)
    assert relative_error(g[0], fa) <= 1e-7 and relative_error(g[1], fb) <= 1e-7


def test_rowwise_cosine_matches_vector_version(rng):
    A, B = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    g = rng.standard_normal(4)
    vals, back = rowwise_cosine(A, B)
    dA, dB = back(g)
    for i in range(4):
        ref = cosine_sim(A[i], B[i])
        assert vals[i] == pytest.approx(ref.value, abs=1e-14)
        np.testing.assert_allclose(dA[i], g[i] * ref.grad[0], atol=1e-14)
        np.testing.assert_allclose(dB[i], g[i] * ref.grad[1], atol=1e-14)


def test_mse_examples(rng):
    A = rng.standard_normal((3, 2))
    assert mse(A, A).value == 0.0
    r = mse([[1.0]], [[0.0]])
    assert r.value == 1.0 and r.grad[0].tolist() == [[2.0]]
    B = rng.standard_normal((3, 2))
    assert mse(A + 2 * (A - B), B).value == pytest.approx(9 * mse(A, B).value, rel=1e-12)
    assert mse(B + 2 * (A - B), B).value == pytest.approx(4 * mse(A, B).value, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (3, 2), elements=finite))
def test_mse_symmetric_nonnegative(A, B):
    assert mse(A, B).value >= 0.0
    assert mse(A, B).value == mse(B, A).value


def test_softmax_cross_entropy_examples():
    assert softmax_cross_entropy(np.zeros((3, 4)), [0, 1, 3]).value == pytest.approx(math.log(4), abs=1e-12)
    assert softmax_cross_entropy([[1e4, 0.0]], [0]).value < 1e-12
    ref = -math.log(math.e / (math.e + 1))
    assert ref == pytest.approx(0.3133, abs=1e-4)
    assert softmax_cross_entropy([[1.0, 0.0], [0.0, 1.0]], [0, 1]).value == pytest.approx(ref, abs=1e-14)


def test_softmax_cross_entropy_no_overflow():
    r = softmax_cross_entropy([[1000.0, -1000.0], [-1000.0, 1000.0]], [1, 1])
    assert np.isfinite(r.value) and r.value == pytest.approx(1000.0, rel=1e-12)
    assert np.all(np.isfinite(r.grad))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), st.floats(-50, 50))
def test_softmax_shift_invariance(logits, c):
    labels = [0, 1, 3]
    a = softmax_cross_entropy(logits, labels)
    b = softmax_cross_entropy(logits + c, labels)
    assert a.value == pytest.approx(b.value, abs=1e-12)
    assert a.value >= 0.0


def test_softmax_grad_matches_fd(rng):
    Z = rng.standard_normal((4, 3))
    labels = [0, 2, 1, 1]
    g = softmax_cross_entropy(Z, labels).grad
    fd = finite_difference_gradient(lambda v: softmax_cross_entropy(v.reshape(4, 3), labels).value, Z.ravel())
    assert relative_error(g, fd) <= 1e-8


def test_finite_difference_examples():
    np.testing.assert_allclose(finite_difference_gradient(lambda x: float(x @ x), [1.0, 2.0]), [2.0, 4.0], atol=1e-8)
    np.testing.assert_array_equal(finite_difference_gradient(lambda x: 3.0, [1.0, 2.0]), [0.0, 0.0])
    g = finite_difference_gradient(lambda x: float(2.5 * np.sum(x)), [0.3, -1.0, 4.0])
    np.testing.assert_allclose(g, 2.5, rtol=1e-9)
