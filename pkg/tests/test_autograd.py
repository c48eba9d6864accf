"""Engine-level tests: op semantics, broadcasting adjoints, graph
traversal, and grad bookkeeping."""
import numpy as np
import pytest

from floodfusion.autograd import (
    Tensor, activation, concat, grad_enabled, no_grad, relu, sigmoid, tanh,
)


def _fd(fn, x, h=1e-6):
    g = np.zeros_like(x)
    flat_x = x.ravel()
    flat_g = g.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        hi = fn(x)
        flat_x[i] = orig - h
        lo = fn(x)
        flat_x[i] = orig
        flat_g[i] = (hi - lo) / (2 * h)
    return g


def test_add_mul_forward():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 4.0])
    assert np.allclose((a + b).data, [4.0, 6.0])
    assert np.allclose((a * b).data, [3.0, 8.0])
    assert np.allclose((a - b).data, [-2.0, -2.0])
    assert np.allclose((2.0 * a).data, [2.0, 4.0])
    assert np.allclose((a / 2.0).data, [0.5, 1.0])


def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2.0).backward()


def test_simple_chain_gradient():
    x = Tensor(np.array([1.5, -0.5, 2.0]), requires_grad=True)
    y = ((x * x) * 3.0 + x).sum()
    y.backward()
    assert np.allclose(x.grad, 6.0 * x.data + 1.0)


def test_broadcast_add_unbroadcasts_grad():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == (4, 3)
    assert b.grad.shape == (3,)
    assert np.allclose(b.grad, 4.0)


def test_broadcast_mul_gradient_matches_fd():
    rng = np.random.default_rng(3)
    a0 = rng.standard_normal((2, 1, 4))
    b0 = rng.standard_normal((3, 1))

    def loss(av, bv):
        return float(((av * bv) ** 2).sum())

    a = Tensor(a0.copy(), requires_grad=True)
    b = Tensor(b0.copy(), requires_grad=True)
    ((a * b) ** 2.0).sum().backward()
    assert np.allclose(a.grad, _fd(lambda v: loss(v, b0), a0), atol=1e-6)
    assert np.allclose(b.grad, _fd(lambda v: loss(a0, v), b0), atol=1e-6)


def test_matmul_gradients():
    rng = np.random.default_rng(5)
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 2))
    a = Tensor(a0, requires_grad=True)
    b = Tensor(b0, requires_grad=True)
    (a @ b).sum().backward()
    assert np.allclose(a.grad, np.ones((3, 2)) @ b0.T)
    assert np.allclose(b.grad, a0.T @ np.ones((3, 2)))


def test_diamond_graph_accumulates_once_per_path():
    # y = x*x + x*x: both branches contribute, d/dx = 4x
    x = Tensor(np.array([3.0]), requires_grad=True)
    sq = x * x
    (sq + sq).sum().backward()
    assert np.allclose(x.grad, 4.0 * 3.0)


def test_grad_accumulates_across_backward_calls():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    assert np.allclose(x.grad, 6.0)
    x.zero_grad()
    assert x.grad is None


def test_no_grad_blocks_recording():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        assert not grad_enabled()
        y = x * 2.0
    assert not y.requires_grad
    assert y._backward is None
    assert grad_enabled()


def test_getitem_basic_and_fancy():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    x[1:, :2].sum().backward()
    expect = np.zeros((3, 4))
    expect[1:, :2] = 1.0
    assert np.allclose(x.grad, expect)

    x2 = Tensor(np.arange(5.0), requires_grad=True)
    idx = np.array([0, 0, 3])  # repeated index must accumulate
    x2[idx].sum().backward()
    assert np.allclose(x2.grad, [2.0, 0.0, 0.0, 1.0, 0.0])


def test_sum_mean_reshape_swapaxes_flip():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.mean().backward()
    assert np.allclose(x.grad, 1.0 / 6.0)

    y = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    (y.reshape(3, 2).swapaxes(0, 1).flip((0,)) * 2.0).sum().backward()
    assert np.allclose(y.grad, 2.0)


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((3, 2)), requires_grad=True)
    out = concat([a, b], axis=0)
    (out * Tensor(np.arange(10.0).reshape(5, 2))).sum().backward()
    assert np.allclose(a.grad, [[0, 1], [2, 3]])
    assert np.allclose(b.grad, [[4, 5], [6, 7], [8, 9]])


def test_sqrt_floor_defuses_zero():
    x = Tensor(np.array([0.0]), requires_grad=True)
    x.sum().sqrt().backward()
    assert np.all(np.isfinite(x.grad))


def test_activations_match_closed_forms():
    z = np.linspace(-3, 3, 11)
    assert np.allclose(relu(Tensor(z)).data, np.maximum(z, 0.0))
    assert np.allclose(sigmoid(Tensor(z)).data, 1 / (1 + np.exp(-z)))
    assert np.allclose(tanh(Tensor(z)).data, np.tanh(z))
    assert np.allclose(activation(Tensor(z), "relu").data,
                       np.maximum(z, 0.0))
    with pytest.raises(ValueError):
        activation(Tensor(z), "softmax")


def test_backward_frees_graph_by_default():
    x = Tensor(np.ones(2), requires_grad=True)
    y = (x * 2.0).sum()
    y.backward()
    assert y._backward is None and y._parents == ()
    y.backward()  # freed graph: no edges left, leaf grads must not change
    assert np.allclose(x.grad, 2.0)


def test_retain_graph_allows_second_pass():
    x = Tensor(np.ones(2), requires_grad=True)
    y = (x * 2.0).sum()
    y.backward(retain_graph=True)
    y.backward(retain_graph=True)
    assert np.allclose(x.grad, 4.0)
