import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eprc import autodiff as ad
from conftest import check_gradients


def test_square_value_and_gradient(f64):
    x = ad.tensor(3.0, requires_grad=True)
    y = ad.mul(x, x)
    assert float(y.data) == 9.0
    (g,) = ad.grad(y, [x])
    assert float(g) == 6.0


@pytest.mark.parametrize("classes", [2, 5, 10])
def test_cross_entropy_uniform_logits(f64, classes):
    logits = ad.Tensor(np.zeros((1, classes)), requires_grad=True)
    loss = ad.softmax_cross_entropy(logits, [classes - 1])
    assert float(loss.data) == pytest.approx(math.log(classes), abs=1e-12)
    (g,) = ad.grad(loss, [logits])
    want = np.full(classes, 1 / classes)
    want[classes - 1] -= 1
    np.testing.assert_allclose(g[0], want, atol=1e-12)


def test_matmul_by_hand(f64):
    a = ad.tensor([[1, 2, 3], [4, 5, 6]])
    b = ad.tensor([[1, 0], [0, 1], [2, -1]])
    np.testing.assert_array_equal(ad.matmul(a, b).data, [[7, -1], [16, -1]])


def test_backward_requires_scalar(f64):
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.grad(ad.mul(x, x))


def test_shape_error_names_primitive():
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(ad.tensor(np.ones((2, 3))), ad.tensor(np.ones((2, 3))))
    with pytest.raises(ad.ShapeError, match="conv2d"):
        ad.conv2d(ad.tensor(np.ones((1, 5, 5, 2))), ad.tensor(np.ones((3, 3, 1, 4))))


def test_non_finite_detected_in_graph():
    g = ad.Graph(lambda x: ad.sum(ad.log(x)), ["x"])
    with pytest.raises(ad.NonFiniteError, match="log"):
        g.evaluate({"x": np.array([1.0, -1.0])})


def test_graph_evaluate_backward():
    g = ad.Graph(lambda x, w: ad.sum(ad.mul(ad.matmul(x, w), ad.matmul(x, w))), ["x", "w"], trainable=["w"])
    x = np.array([[1.0, 2.0]])
    w = np.array([[0.5], [1.0]])
    out = g.evaluate({"x": x, "w": w})
    assert float(out.data) == pytest.approx(2.5 ** 2)
    grads = g.backward()
    assert set(grads) == {"w"}
    np.testing.assert_allclose(grads["w"], 2 * 2.5 * x.T, rtol=1e-6)


def test_default_precision_is_float32_and_switchable():
    assert ad.tensor(1.0).data.dtype == np.float32
    with ad.precision("float64"):
        assert ad.tensor(1.0).data.dtype == np.float64
    assert ad.tensor(1.0).data.dtype == np.float32


# --- finite-difference oracle for every primitive --------------------------

R = np.random.default_rng(7)


def _r(*shape):
    return R.standard_normal(shape)


def _w(out):
    """Random fixed weighting so a non-scalar output becomes a generic scalar."""
    w = ad.constant(np.random.default_rng(out.size).standard_normal(out.shape))
    return ad.sum(ad.mul(out, w))


PRIMITIVES = {
    "add": (lambda a, b: _w(ad.add(a, b)), [_r(3, 4), _r(4)]),
    "sub": (lambda a, b: _w(ad.sub(a, b)), [_r(3, 4), _r(3, 1)]),
    "mul": (lambda a, b: _w(ad.mul(a, b)), [_r(2, 3), _r(2, 3)]),
    "neg": (lambda a: _w(ad.neg(a)), [_r(5)]),
    "scale": (lambda a: _w(ad.scale(a, -2.5)), [_r(5)]),
    "sum_axis": (lambda a: _w(ad.sum(a, axis=1)), [_r(3, 4)]),
    "relu": (lambda a: _w(ad.relu(a)), [_r(4, 5) + 0.05]),
    "tanh": (lambda a: _w(ad.tanh(a)), [_r(4, 5)]),
    "sigmoid": (lambda a: _w(ad.sigmoid(a)), [_r(4, 5)]),
    "softplus": (lambda a: _w(ad.softplus(a)), [_r(4, 5) * 3]),
    "log": (lambda a: _w(ad.log(a)), [np.abs(_r(6)) + 0.5]),
    "maximum": (lambda a: _w(ad.maximum(a, 0.1)), [np.abs(_r(6)) + 0.2]),
    "reshape": (lambda a: _w(ad.reshape(a, (6, 2))), [_r(3, 4)]),
    "transpose": (lambda a: _w(ad.transpose(a, (2, 0, 1))), [_r(2, 3, 4)]),
    "getitem": (lambda a: _w(ad.getitem(a, (slice(1, 3), 0))), [_r(4, 3)]),
    "matmul": (lambda a, b: _w(ad.matmul(a, b)), [_r(3, 4), _r(4, 2)]),
    "bias_add": (lambda a, b: _w(ad.bias_add(a, b)), [_r(2, 3, 3, 4), _r(4)]),
    "conv_valid": (lambda a, b: _w(ad.conv2d(a, b, "valid")), [_r(2, 6, 5, 2), _r(3, 2, 2, 3)]),
    "conv_same": (lambda a, b: _w(ad.conv2d(a, b, "same")), [_r(1, 5, 6, 2), _r(3, 4, 2, 2)]),
    "max_pool": (lambda a: _w(ad.max_pool2x2(a)), [_r(2, 5, 4, 3)]),
    "softmax_ce": (lambda a: ad.softmax_cross_entropy(a, [0, 3, 1]), [_r(3, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name):
    fn, arrays = PRIMITIVES[name]
    check_gradients(fn, arrays)


def test_gradient_of_sum_is_sum_of_gradients(f64, rng):
    x = ad.Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    w = ad.constant(rng.standard_normal((3, 2)))
    f1 = lambda: ad.sum(ad.tanh(ad.matmul(x, w)))
    f2 = lambda: ad.softmax_cross_entropy(ad.matmul(x, w), [0, 1, 1, 0])
    (g1,) = ad.grad(f1(), [x])
    (g2,) = ad.grad(f2(), [x])
    (g12,) = ad.grad(ad.add(f1(), f2()), [x])
    np.testing.assert_allclose(g12, g1 + g2, rtol=1e-12, atol=1e-14)


def test_evaluate_is_deterministic(rng):
    g = ad.Graph(lambda x: ad.sum(ad.softplus(ad.matmul(x, ad.transpose(x, (1, 0))))), ["x"])
    x = rng.standard_normal((5, 4))
    a = g.evaluate({"x": x}).data.copy()
    ga = g.backward()["x"].copy()
    b = g.evaluate({"x": x}).data
    assert a == b
    np.testing.assert_array_equal(ga, g.backward()["x"])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_random_mlp_graph_gradients(n, d, h, seed):
    r = np.random.default_rng(seed)
    def fn(x, w1, w2):
        return ad.sum(ad.sigmoid(ad.matmul(ad.tanh(ad.matmul(x, w1)), w2)))
    check_gradients(fn, [r.standard_normal((n, d)), r.standard_normal((d, h)), r.standard_normal((h, 2))])
