"""The finite-difference harness itself: it must flag wrong gradients and
agree with hand-computed derivatives on closed-form cases."""
import numpy as np

from floodfusion.autograd import Tensor, make_node
from floodfusion.gradcheck import (
    CASES,
    max_rel_error,
    numerical_grad,
    run_suite,
)


def test_numerical_grad_quadratic_closed_form():
    x = np.array([1.0, -2.0, 3.0])

    def fn(ts):
        return (ts[0] * ts[0]).sum()

    got = numerical_grad(fn, [x], 0)
    assert np.allclose(got, 2.0 * x, atol=1e-7)


def test_max_rel_error_near_zero_for_correct_op():
    rng = np.random.default_rng(0)
    arrays = [rng.standard_normal((3, 4))]

    def fn(ts):
        return (ts[0] * ts[0] * 0.5).sum()

    assert max_rel_error(fn, arrays) < 1e-7


def test_max_rel_error_catches_planted_bug():
    # an op whose backward is off by 1 percent must fail a 1e-4 tolerance
    def buggy_double(x):
        out = make_node(x.data * 2.0, (x,), lambda g: (g * 2.02,))
        return out

    rng = np.random.default_rng(1)
    arrays = [rng.standard_normal(5)]

    def fn(ts):
        return buggy_double(ts[0]).sum()

    assert max_rel_error(fn, arrays) > 1e-3


def test_suite_covers_every_layer_family():
    names = {name for name, _ in CASES}
    assert {"conv2d_reflect", "conv2d_zero", "conv2d_transpose",
            "batchnorm_train", "batchnorm_infer", "relu", "sigmoid",
            "tanh", "lstm_step", "linear", "rmse_loss"} <= names


def test_suite_passes_single_seed():
    for name, err, ok in run_suite(n_seeds=1):
        assert ok, f"{name}: {err:.3e}"
