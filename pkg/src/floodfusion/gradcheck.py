"""Finite-difference verification of every differentiable op.

Central differences with h = 1e-5 at 64-bit precision, compared against the
tape's analytic gradients.  Used both by the test suite and the `gradcheck`
CLI subcommand.
"""
from __future__ import annotations

import numpy as np

from .autograd import Tensor, activation
from .layers import (
    BatchNormParams,
    ConvParams,
    LSTMParams,
    LinearParams,
    batchnorm2d,
    conv2d_reflect,
    conv2d_transpose,
    conv2d_zero,
    linear,
    lstm_step,
)
from .trainer import rmse_loss

H_STEP = 1e-5
RTOL = 1e-4


def numerical_grad(fn, arrays, idx, h=H_STEP):
    """Central-difference gradient of scalar fn w.r.t. arrays[idx]."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[idx])
    flat = base[idx].ravel()
    gflat = grad.ravel()
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        hi = fn([Tensor(a) for a in base]).item()
        flat[j] = orig - h
        lo = fn([Tensor(a) for a in base]).item()
        flat[j] = orig
        gflat[j] = (hi - lo) / (2.0 * h)
    return grad


def max_rel_error(fn, arrays):
    """Max relative error between analytic and numeric grads over inputs."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(tensors).backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        num = numerical_grad(fn, arrays, i)
        # error relative to the gradient's scale, so components the op
        # provably zeroes out (e.g. batchnorm's shift direction) don't
        # divide by ~0
        scale = max(float(np.abs(ana).max(initial=0.0)),
                    float(np.abs(num).max(initial=0.0)), 1e-6)
        worst = max(worst, float(np.abs(ana - num).max()) / scale)
    return worst


def _away_from_kink(x, margin=0.01):
    """Nudge values off 0 so the relu finite difference is two-sided safe."""
    return np.where(np.abs(x) < margin, x + 2 * margin, x)


def _case_conv(pad_mode):
    def build(rng):
        x = rng.standard_normal((2, 3, 5, 6))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.5
        b = rng.standard_normal(4) * 0.1
        conv = conv2d_reflect if pad_mode == "reflect" else conv2d_zero

        def fn(ts):
            return conv(ts[0], ConvParams(ts[1], ts[2])).sum()

        return fn, [x, w, b]
    return build


def _case_conv_transpose(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((2, 3, 3, 3)) * 0.5
    b = rng.standard_normal(3) * 0.1

    def fn(ts):
        y = conv2d_transpose(ts[0], ConvParams(ts[1], ts[2]))
        return (y * y).sum()

    return fn, [x, w, b]


def _case_batchnorm(training):
    def build(rng):
        x = rng.standard_normal((3, 2, 4, 4)) * 2.0
        gamma = rng.uniform(0.5, 1.5, 2)
        beta = rng.standard_normal(2) * 0.3
        rm = rng.standard_normal(2) * 0.2
        rv = rng.uniform(0.5, 2.0, 2)
        # weighting breaks batchnorm's per-channel sum invariants, which
        # would otherwise make the x-gradient identically zero
        wgt = rng.standard_normal((3, 2, 4, 4))

        def fn(ts):
            p = BatchNormParams(gamma=ts[1], beta=ts[2],
                                running_mean=rm.copy(),
                                running_var=rv.copy())
            y = batchnorm2d(ts[0], p, training=training)
            return (y * y * wgt).sum() + (y * wgt).sum()

        return fn, [x, gamma, beta]
    return build


def _case_activation(kind):
    def build(rng):
        x = rng.standard_normal((4, 5))
        if kind == "relu":
            x = _away_from_kink(x)

        def fn(ts):
            y = activation(ts[0], kind)
            return (y * (1.0 + y)).sum()

        return fn, [x]
    return build


def _case_lstm(rng):
    b, d, h = 3, 2, 4
    x = rng.standard_normal((b, d))
    hh = rng.standard_normal((b, h)) * 0.5
    cc = rng.standard_normal((b, h)) * 0.5
    iw = rng.standard_normal((4 * h, d)) * 0.4
    hw = rng.standard_normal((4 * h, h)) * 0.4
    bias = rng.standard_normal(4 * h) * 0.2

    def fn(ts):
        p = LSTMParams(ts[3], ts[4], ts[5])
        h_new, c_new = lstm_step(ts[0], ts[1], ts[2], p)
        return (h_new * h_new).sum() + c_new.sum()

    return fn, [x, hh, cc, iw, hw, bias]


def _case_linear(rng):
    x = rng.standard_normal((5, 3))
    w = rng.standard_normal((2, 3)) * 0.5
    b = rng.standard_normal(2) * 0.1

    def fn(ts):
        y = linear(ts[0], LinearParams(ts[1], ts[2]))
        return (y * y).sum()

    return fn, [x, w, b]


def _case_rmse(rng):
    pred = rng.uniform(0.1, 0.9, (2, 4, 4))
    target = rng.uniform(0.0, 1.0, (2, 4, 4))

    def fn(ts):
        return rmse_loss(ts[0], target)

    return fn, [pred]


CASES = [
    ("conv2d_reflect", _case_conv("reflect")),
    ("conv2d_zero", _case_conv("zero")),
    ("conv2d_transpose", _case_conv_transpose),
    ("batchnorm_train", _case_batchnorm(True)),
    ("batchnorm_infer", _case_batchnorm(False)),
    ("relu", _case_activation("relu")),
    ("sigmoid", _case_activation("sigmoid")),
    ("tanh", _case_activation("tanh")),
    ("lstm_step", _case_lstm),
    ("linear", _case_linear),
    ("rmse_loss", _case_rmse),
]


def run_suite(n_seeds: int = 5, rtol: float = RTOL):
    """Run every case over `n_seeds` seeds; returns
    [(name, max_rel_err, passed), ...]."""
    results = []
    for name, build in CASES:
        worst = 0.0
        for seed in range(n_seeds):
            fn, arrays = build(np.random.default_rng([seed, 13]))
            worst = max(worst, max_rel_error(fn, arrays))
        results.append((name, worst, worst <= rtol))
    return results
