"""Neural layers for the fusion model: 3x3 convolutions (reflect or zero
padding, stride 1, size preserving), transposed convolution, batchnorm,
a scalar-sequence LSTM cell and a linear projection.

Convolutions run as im2col + one BLAS matmul; the backward folds the
padded-input gradient back through the padding adjoint (reflect padding
accumulates border contributions onto their interior source cells).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, make_node


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class ConvParams:
    """3x3 convolution weights [out_ch, in_ch, 3, 3] and bias [out_ch].

    For :func:`conv2d_transpose` the same container is read as
    [in_ch, out_ch, 3, 3] (the transposed-conv convention).
    """
    weights: Tensor
    bias: Tensor

    def __post_init__(self):
        if self.weights.shape[2:] != (3, 3):
            raise ValueError(
                f"kernel must be 3x3, got {self.weights.shape[2:]}")

    @property
    def out_ch(self) -> int:
        return self.weights.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weights.shape[1]

    def parameters(self):
        return [self.weights, self.bias]


@dataclass
class BatchNormParams:
    """Per-channel affine batchnorm with running statistics.

    `running_mean` / `running_var` are plain numpy buffers updated in
    training mode with the usual exponential rule; normalization in training
    uses biased batch variance, the running buffer stores the unbiased one.
    """
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be nonnegative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]


@dataclass
class LSTMParams:
    """LSTM cell parameters; gate blocks are ordered (i, f, g, o):
    input gate, forget gate, cell candidate, output gate.
    """
    input_weights: Tensor   # [4H, D]
    hidden_weights: Tensor  # [4H, H]
    biases: Tensor          # [4H]

    def __post_init__(self):
        if self.input_weights.shape[0] % 4 != 0:
            raise ValueError("gate dimension must be a multiple of 4")

    @property
    def hidden_size(self) -> int:
        return self.input_weights.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]

    def parameters(self):
        return [self.input_weights, self.hidden_weights, self.biases]


@dataclass
class LinearParams:
    weights: Tensor  # [out, in]
    bias: Tensor     # [out]

    def parameters(self):
        return [self.weights, self.bias]


# ---------------------------------------------------------------------------
# padding helpers (width 1 on the two trailing axes)


def _pad1(x: np.ndarray, mode: str) -> np.ndarray:
    np_mode = "reflect" if mode == "reflect" else "constant"
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode=np_mode)


def _pad1_adjoint(gpad: np.ndarray, mode: str) -> np.ndarray:
    if mode == "zero":
        return gpad[:, :, 1:-1, 1:-1]
    # reflect: border row/col gradients flow back to the interior cells
    # they mirrored; folding rows first then columns handles corners.
    tmp = gpad[:, :, 1:-1, :].copy()
    tmp[:, :, 1, :] += gpad[:, :, 0, :]
    tmp[:, :, -2, :] += gpad[:, :, -1, :]
    core = tmp[:, :, :, 1:-1].copy()
    core[:, :, :, 1] += tmp[:, :, :, 0]
    core[:, :, :, -2] += tmp[:, :, :, -1]
    return core


def _im2col(xpad: np.ndarray) -> np.ndarray:
    """[N,C,Hp,Wp] -> contiguous [N*(Hp-2)*(Wp-2), C*9] patch matrix."""
    win = sliding_window_view(xpad, (3, 3), axis=(2, 3))  # [N,C,h,w,3,3]
    n, c, h, w = win.shape[:4]
    return np.ascontiguousarray(
        win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * 9))


# ---------------------------------------------------------------------------
# convolution


def _conv2d(x: Tensor, weights: Tensor, bias: Tensor, pad_mode: str) -> Tensor:
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d expects 3D or 4D input, got {x.ndim}D")
    n, c, h, w = xd.shape
    o, ci = weights.shape[:2]
    if ci != c:
        raise ValueError(
            f"conv2d channel mismatch: input has {c} channels, "
            f"kernel expects {ci}")
    if h < 2 or w < 2:
        raise ValueError("reflect padding needs spatial dims >= 2")

    wmat = weights.data.reshape(o, c * 9)
    col = _im2col(_pad1(xd, pad_mode))
    y = col @ wmat.T + bias.data
    # materialize NCHW contiguously; downstream ops on strided views are
    # several times slower than the one copy
    y = np.ascontiguousarray(y.reshape(n, h, w, o).transpose(0, 3, 1, 2))

    need_dx = x.requires_grad
    need_dw = weights.requires_grad

    def back(g):
        if squeeze:
            g = g[None]
        dw = db = dx = None
        if need_dw:
            gflat = np.ascontiguousarray(
                g.transpose(0, 2, 3, 1).reshape(-1, o))
            dw = (gflat.T @ col).reshape(weights.shape)
            db = gflat.sum(axis=0)
        if need_dx:
            # d(xpad) is the full correlation of g with the flipped kernel;
            # run it as a second im2col + gemm (g zero-padded by 2 yields
            # the (H+2, W+2) padded-input gradient), then fold the padding
            gpad2 = np.pad(g, ((0, 0), (0, 0), (2, 2), (2, 2)))
            colg = _im2col(gpad2)
            wt = weights.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dxpad = (colg @ wt.reshape(c, o * 9).T).reshape(
                n, h + 2, w + 2, c).transpose(0, 3, 1, 2)
            dx = _pad1_adjoint(dxpad, pad_mode)
            if squeeze:
                dx = dx[0]
        return dx, dw, db

    return make_node(y[0] if squeeze else y, (x, weights, bias), back)


def conv2d_reflect(x: Tensor, p: ConvParams) -> Tensor:
    """Size-preserving 3x3 convolution with reflection padding, stride 1."""
    return _conv2d(x, p.weights, p.bias, "reflect")


def conv2d_zero(x: Tensor, p: ConvParams) -> Tensor:
    """Size-preserving 3x3 convolution with zero padding, stride 1."""
    return _conv2d(x, p.weights, p.bias, "zero")


def conv2d_transpose(x: Tensor, p: ConvParams) -> Tensor:
    """Size-preserving 3x3 transposed convolution (stride 1, padding 1).

    `p.weights` is read as [in_ch, out_ch, 3, 3].  Equivalent to the adjoint
    of :func:`conv2d_zero` with the same weights, so it is realized as a
    zero-padded convolution of the channel-swapped, spatially flipped kernel.
    """
    if p.weights.shape[0] != (x.shape[0] if x.ndim == 3 else x.shape[1]):
        raise ValueError(
            f"conv2d_transpose channel mismatch: input has "
            f"{x.shape[0] if x.ndim == 3 else x.shape[1]} channels, kernel "
            f"expects {p.weights.shape[0]}")
    w2 = p.weights.swapaxes(0, 1).flip((2, 3))
    return _conv2d(x, w2, p.bias, "zero")


# ---------------------------------------------------------------------------
# batchnorm


def batchnorm2d(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    """Channelwise batchnorm over [N,C,H,W] (a 3D [C,H,W] input is treated
    as batch size 1).  Training mode normalizes by batch statistics and
    updates the running buffers; inference mode uses the running buffers.
    """
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    n, c, h, w = xd.shape
    if c != p.channels:
        raise ValueError(
            f"batchnorm channel mismatch: input has {c}, params have "
            f"{p.channels}")
    axes = (0, 2, 3)
    m = n * h * w
    gamma = p.gamma.data.reshape(1, c, 1, 1)

    if training:
        if m < 2:
            raise ValueError(
                "training-mode batchnorm needs >= 2 elements per channel")
        mu = xd.mean(axis=axes)
        xc = xd - mu.reshape(1, c, 1, 1)
        var = (xc * xc).mean(axis=axes)
        p.running_mean *= 1.0 - p.momentum
        p.running_mean += p.momentum * mu
        p.running_var *= 1.0 - p.momentum
        p.running_var += p.momentum * var * (m / (m - 1))
        istd = 1.0 / np.sqrt(var + p.eps)
        xhat = xc * istd.reshape(1, c, 1, 1)
        y = gamma * xhat + p.beta.data.reshape(1, c, 1, 1)

        def back(g):
            if squeeze:
                g = g[None]
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gamma
            s1 = dxhat.sum(axis=axes).reshape(1, c, 1, 1)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(1, c, 1, 1)
            dx = (dxhat - s1 / m - xhat * s2 / m) * istd.reshape(1, c, 1, 1)
            if squeeze:
                dx = dx[0]
            return dx, dgamma, dbeta
    else:
        istd = 1.0 / np.sqrt(p.running_var + p.eps)
        xhat = (xd - p.running_mean.reshape(1, c, 1, 1)) * istd.reshape(
            1, c, 1, 1)
        y = gamma * xhat + p.beta.data.reshape(1, c, 1, 1)

        def back(g):
            if squeeze:
                g = g[None]
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dx = g * gamma * istd.reshape(1, c, 1, 1)
            if squeeze:
                dx = dx[0]
            return dx, dgamma, dbeta

    return make_node(y[0] if squeeze else y, (x, p.gamma, p.beta), back)


# ---------------------------------------------------------------------------
# LSTM cell and linear projection


def lstm_step(x_t: Tensor, h: Tensor, c: Tensor, p: LSTMParams):
    """One LSTM update for a batch of sequences.

    x_t: [B, D], h and c: [B, H].  Gate blocks in (i, f, g, o) order:
    c' = f*c + i*g,  h' = o*tanh(c').  Implemented as one fused node per
    output; composing it from primitive ops costs ~10 large temporaries
    per step, which dominates training time.
    """
    hs = p.hidden_size
    if x_t.shape[1] != p.input_size or h.shape[1] != hs or c.shape[1] != hs:
        raise ValueError(
            f"lstm_step shape mismatch: x {x_t.shape}, h {h.shape}, "
            f"c {c.shape} vs D={p.input_size}, H={hs}")
    xd, hd, cd = x_t.data, h.data, c.data
    n, d = xd.shape

    # one augmented gemm [h | x | 1] @ [Wh.T; Wx.T; b] yields every gate
    # with the bias already added
    aug = np.empty((n, hs + d + 1))
    aug[:, :hs] = hd
    aug[:, hs:hs + d] = xd
    aug[:, hs + d] = 1.0
    waug = np.empty((hs + d + 1, 4 * hs))
    waug[:hs] = p.hidden_weights.data.T
    waug[hs:hs + d] = p.input_weights.data.T
    waug[hs + d] = p.biases.data
    gates = aug @ waug

    # sigmoid evaluated as (1 + tanh(z/2)) / 2: one tanh over the full gate
    # block beats three exps, and every later op runs on contiguous buffers
    gates *= 0.5
    gates[:, 2 * hs:3 * hs] *= 2.0
    np.tanh(gates, out=gates)
    ti = np.ascontiguousarray(gates[:, 0:hs])
    tf = np.ascontiguousarray(gates[:, hs:2 * hs])
    tg = np.ascontiguousarray(gates[:, 2 * hs:3 * hs])  # tanh(z_g) itself
    to = np.ascontiguousarray(gates[:, 3 * hs:4 * hs])

    c_new = np.add(tf, 1.0)           # c' = sig(f)*c + sig(i)*g
    c_new *= cd
    tmp = np.add(ti, 1.0)
    tmp *= tg
    c_new += tmp
    c_new *= 0.5
    tc = np.tanh(c_new)
    h_new = np.add(to, 1.0)           # h' = sig(o)*tanh(c')
    h_new *= tc
    h_new *= 0.5

    parents = (x_t, h, c, p.input_weights, p.hidden_weights, p.biases)
    needs = [t.requires_grad for t in parents]

    def back(gfull):
        # gfull carries the h' cotangent in [:, :H] and c' in [:, H:]
        gh = gfull[:, :hs]
        gc = gfull[:, hs:]
        # d sig/dz = (1 - t^2)/4 with t = tanh(z/2); d tanh/dz = 1 - t^2
        so = np.add(to, 1.0)
        so *= 0.5
        dc_new = 1.0 - tc * tc
        dc_new *= gh * so
        dc_new += gc
        dai = (1.0 - ti * ti) * 0.25
        dai *= dc_new
        dai *= tg
        daf = (1.0 - tf * tf) * 0.25
        daf *= dc_new
        daf *= cd
        dag = 1.0 - tg * tg
        dag *= dc_new
        dag *= np.add(ti, 1.0) * 0.5
        dao = (1.0 - to * to) * 0.25
        dao *= gh
        dao *= tc
        da = np.concatenate([dai, daf, dag, dao], axis=1)
        daug = (da @ waug[:hs + d].T
                if needs[0] or needs[1] else None)
        dwaug = (aug.T @ da
                 if needs[3] or needs[4] or needs[5] else None)
        dc = None
        if needs[2]:
            dc = np.add(tf, 1.0)
            dc *= 0.5
            dc *= dc_new
        return (daug[:, hs:hs + d] if needs[0] else None,
                daug[:, :hs] if needs[1] else None,
                dc,
                np.ascontiguousarray(dwaug[hs:hs + d].T)
                if needs[3] else None,
                np.ascontiguousarray(dwaug[:hs].T) if needs[4] else None,
                dwaug[hs + d].copy() if needs[5] else None)

    out = make_node(np.concatenate([h_new, c_new], axis=1), parents, back)
    return out[:, :hs], out[:, hs:]


def linear(x: Tensor, p: LinearParams) -> Tensor:
    """Affine map [B, in] -> [B, out]."""
    return x @ p.weights.swapaxes(0, 1) + p.bias
