"""Fusion architecture and CNN-only baseline.

The fusion model runs a shared convolutional encoder (CNN A) over each of the
10 timesteps, feeds the first 9 encoded frames per pixel through an LSTM as
1024 independent scalar time series, maps the final hidden state back to a
32x32 image through a linear projection and a transposed convolution,
concatenates it with the time-t encoding, and finishes with a single
convolution (CNN B) and a sigmoid.

Checkpoints are a single file: one JSON header line (architecture spec, seed,
schema version) followed by the raw little-endian float64 parameter and
buffer blobs in the order reported by ``parameters()`` / ``buffers()``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, relu, sigmoid, concat
from .layers import (
    BatchNormParams,
    ConvParams,
    LSTMParams,
    LinearParams,
    batchnorm2d,
    conv2d_reflect,
    conv2d_transpose,
    linear,
    lstm_step,
)

CHECKPOINT_SCHEMA = 1
IN_CHANNELS = 10      # 7 optical bands + elevation, slope, HAND
CHIP_SIZE = 32
SEQ_LEN = 10          # 9 history frames + time t


@dataclass
class ArchSpec:
    """Architecture hyperparameters; fully determines the parameter layout."""
    kind: str = "fusion"            # "fusion" | "baseline"
    width: int = 128                # intermediate channel count of CNN A
    hidden_size: int = 32           # LSTM hidden size H
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fusion", "baseline"):
            raise ValueError(f"unknown model kind: {self.kind!r}")
        if self.width < 1 or self.hidden_size < 1:
            raise ValueError("width and hidden_size must be positive")

    def to_dict(self):
        return {"kind": self.kind, "width": self.width,
                "hidden_size": self.hidden_size, "seed": self.seed}


def _init_conv(rng, out_ch, in_ch) -> ConvParams:
    fan_in = in_ch * 9
    bound = np.sqrt(6.0 / fan_in)  # uniform with std sqrt(2/fan_in)
    w = Tensor(rng.uniform(-bound, bound, size=(out_ch, in_ch, 3, 3)),
               requires_grad=True)
    b = Tensor(np.zeros(out_ch), requires_grad=True)
    return ConvParams(w, b)


def _init_bn(ch) -> BatchNormParams:
    return BatchNormParams(
        gamma=Tensor(np.ones(ch), requires_grad=True),
        beta=Tensor(np.zeros(ch), requires_grad=True),
        running_mean=np.zeros(ch),
        running_var=np.ones(ch),
    )


def _init_lstm(rng, hidden, inp) -> LSTMParams:
    bound = 1.0 / np.sqrt(hidden)
    iw = Tensor(rng.uniform(-bound, bound, size=(4 * hidden, inp)),
                requires_grad=True)
    hw = Tensor(rng.uniform(-bound, bound, size=(4 * hidden, hidden)),
                requires_grad=True)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias starts open
    return LSTMParams(iw, hw, Tensor(b, requires_grad=True))


class _CnnA:
    """Shared encoder: 4 x (conv -> batchnorm -> relu) widening the stack
    from 10 channels to `width`, then a final conv down to 1 channel with
    no activation (the pre-LSTM encoding is unbounded)."""

    def __init__(self, rng, width):
        chans = [IN_CHANNELS, width, width, width, width]
        self.convs = [_init_conv(rng, chans[i + 1], chans[i])
                      for i in range(4)]
        self.bns = [_init_bn(width) for _ in range(4)]
        self.final = _init_conv(rng, 1, width)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        for conv, bn in zip(self.convs, self.bns):
            x = relu(batchnorm2d(conv2d_reflect(x, conv), bn, training))
        return conv2d_reflect(x, self.final)

    def parameters(self):
        out = []
        for conv, bn in zip(self.convs, self.bns):
            out += conv.parameters() + bn.parameters()
        return out + self.final.parameters()

    def buffers(self):
        out = []
        for bn in self.bns:
            out += bn.buffers()
        return out


class FusionModel:
    def __init__(self, arch: ArchSpec):
        if arch.kind != "fusion":
            raise ValueError("ArchSpec.kind must be 'fusion'")
        self.arch = arch
        rng = np.random.default_rng(arch.seed)
        h = arch.hidden_size
        self.cnn_a = _CnnA(rng, arch.width)
        self.lstm = _init_lstm(rng, h, 1)
        self.proj = None
        if h > 1:
            bound = 1.0 / np.sqrt(h)
            self.proj = LinearParams(
                Tensor(rng.uniform(-bound, bound, size=(1, h)),
                       requires_grad=True),
                Tensor(np.zeros(1), requires_grad=True))
        self.deconv = _init_conv(rng, 1, 1)
        self.cnn_b = _init_conv(rng, 1, 2)

    def parameters(self):
        out = self.cnn_a.parameters() + self.lstm.parameters()
        if self.proj is not None:
            out += self.proj.parameters()
        return out + self.deconv.parameters() + self.cnn_b.parameters()

    def buffers(self):
        return self.cnn_a.buffers()


class BaselineCNN:
    """CNN A followed by a sigmoid; consumes only the time-t feature stack."""

    def __init__(self, arch: ArchSpec):
        if arch.kind != "baseline":
            raise ValueError("ArchSpec.kind must be 'baseline'")
        self.arch = arch
        self.cnn_a = _CnnA(np.random.default_rng(arch.seed), arch.width)

    def parameters(self):
        return self.cnn_a.parameters()

    def buffers(self):
        return self.cnn_a.buffers()


def init_params(seed: int, kind: str = "fusion", width: int = 128,
                hidden_size: int = 32):
    arch = ArchSpec(kind=kind, width=width, hidden_size=hidden_size,
                    seed=seed)
    return FusionModel(arch) if kind == "fusion" else BaselineCNN(arch)


# ---------------------------------------------------------------------------
# forward passes


def cnn_a_forward(features: Tensor, m, training: bool = False) -> Tensor:
    """Encode a [10,32,32] feature stack (or [N,10,H,W] batch) to 1 channel."""
    ch = features.shape[0] if features.ndim == 3 else features.shape[1]
    if ch != IN_CHANNELS:
        raise ValueError(f"expected {IN_CHANNELS} input channels, got {ch}")
    return m.cnn_a.forward(features, training)


def fusion_forward(seq: Tensor, m: FusionModel,
                   training: bool = False) -> Tensor:
    """Predict the fractional-inundation map from a feature sequence.

    `seq` is [10,10,32,32] (single sample, timesteps oldest to newest) or
    [N,10,10,32,32].  Output is [32,32] / [N,32,32], elementwise in (0,1).
    """
    squeeze = seq.ndim == 4
    if squeeze:
        seq = seq.reshape(1, *seq.shape)
    n, t, c, hh, ww = seq.shape
    if t != SEQ_LEN:
        raise ValueError(f"expected sequence length {SEQ_LEN}, got {t}")
    if c != IN_CHANNELS:
        raise ValueError(f"expected {IN_CHANNELS} input channels, got {c}")

    # one batched pass of the shared encoder over all N*10 frames
    frames = seq.reshape(n * t, c, hh, ww)
    enc = m.cnn_a.forward(frames, training).reshape(n, t, hh, ww)

    npix = hh * ww
    h = Tensor(np.zeros((n * npix, m.arch.hidden_size)))
    cell = Tensor(np.zeros((n * npix, m.arch.hidden_size)))
    for step in range(t - 1):  # the 9 history frames, oldest first
        x_t = enc[:, step].reshape(n * npix, 1)
        h, cell = lstm_step(x_t, h, cell, m.lstm)

    pixel = linear(h, m.proj) if m.proj is not None else h
    lstm_img = pixel.reshape(n, 1, hh, ww)
    deconved = conv2d_transpose(lstm_img, m.deconv)
    merged = concat([deconved, enc[:, t - 1].reshape(n, 1, hh, ww)], axis=1)
    out = sigmoid(conv2d_reflect(merged, m.cnn_b)).reshape(n, hh, ww)
    return out.reshape(hh, ww) if squeeze else out


def baseline_forward(features_t: Tensor, b: BaselineCNN,
                     training: bool = False) -> Tensor:
    """Predict from the time-t stack only; [10,32,32] -> [32,32] in (0,1)."""
    out = sigmoid(cnn_a_forward(features_t, b, training))
    if out.ndim == 3:
        return out.reshape(out.shape[1], out.shape[2])
    return out.reshape(out.shape[0], out.shape[2], out.shape[3])


def forward(model, sample: Tensor, training: bool = False) -> Tensor:
    """Dispatch on model kind; `sample` is always the full [.,10,10,32,32]
    sequence, the baseline reads only the last timestep."""
    if isinstance(model, FusionModel):
        return fusion_forward(sample, model, training)
    t_idx = sample.ndim - 4
    feats = sample[:, SEQ_LEN - 1] if t_idx == 1 else sample[SEQ_LEN - 1]
    return baseline_forward(feats, model, training)


def parameter_count(kind: str, width: int, hidden_size: int) -> int:
    """Closed-form parameter count; regression guard for the layouts."""
    conv = lambda o, i: o * i * 9 + o
    cnn_a = conv(width, IN_CHANNELS) + 3 * conv(width, width) \
        + 4 * 2 * width + conv(1, width)
    if kind == "baseline":
        return cnn_a
    h = hidden_size
    lstm = 4 * h * 1 + 4 * h * h + 4 * h
    proj = (h + 1) if h > 1 else 0
    return cnn_a + lstm + proj + conv(1, 1) + conv(1, 2)


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(model, path):
    header = {
        "schema_version": CHECKPOINT_SCHEMA,
        "arch": model.arch.to_dict(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        for buf in model.buffers():
            fh.write(np.ascontiguousarray(buf, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("schema_version") != CHECKPOINT_SCHEMA:
            raise ValueError(
                f"unsupported checkpoint schema: {header.get('schema_version')}")
        arch = ArchSpec(**header["arch"])
        model = (FusionModel(arch) if arch.kind == "fusion"
                 else BaselineCNN(arch))
        for p in model.parameters():
            raw = fh.read(p.data.size * 8)
            p.data = np.frombuffer(raw, dtype="<f8").reshape(
                p.data.shape).copy()
        for buf in model.buffers():
            raw = fh.read(buf.size * 8)
            buf[...] = np.frombuffer(raw, dtype="<f8").reshape(buf.shape)
        if fh.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return model
