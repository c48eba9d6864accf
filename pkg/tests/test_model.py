"""Architecture tests: parameter layout, weight sharing, temporal
sensitivity, per-pixel independence, checkpoint round trips."""
import os

import numpy as np
import pytest

from floodfusion.autograd import Tensor
from floodfusion.model import (
    ArchSpec,
    BaselineCNN,
    FusionModel,
    baseline_forward,
    forward,
    fusion_forward,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)


def _rand_seq(rng, n=None):
    shape = (10, 10, 32, 32) if n is None else (n, 10, 10, 32, 32)
    return rng.random(shape)


def test_archspec_validation():
    with pytest.raises(ValueError):
        ArchSpec(kind="transformer")
    with pytest.raises(ValueError):
        ArchSpec(width=0)
    with pytest.raises(ValueError):
        FusionModel(ArchSpec(kind="baseline"))
    with pytest.raises(ValueError):
        BaselineCNN(ArchSpec(kind="fusion"))


@pytest.mark.parametrize("kind,width,hidden", [
    ("baseline", 8, 32), ("fusion", 8, 32), ("fusion", 12, 16),
    ("fusion", 8, 1),   # H=1 drops the projection head
])
def test_parameter_count_matches_layout(kind, width, hidden):
    model = init_params(seed=0, kind=kind, width=width, hidden_size=hidden)
    actual = sum(p.size for p in model.parameters())
    assert actual == parameter_count(kind, width, hidden)


def test_conv_init_scale_is_he():
    # uniform(-sqrt(6/fan_in), +) has std sqrt(2/fan_in)
    model = init_params(seed=3, kind="baseline", width=64)
    w = model.cnn_a.convs[1].weights.data  # fan_in = 64 * 9
    expect = np.sqrt(2.0 / (64 * 9))
    assert abs(w.std() / expect - 1.0) < 0.05
    assert np.allclose(model.cnn_a.convs[0].bias.data, 0.0)


def test_forget_gate_bias_initialized_open():
    m = init_params(seed=0, kind="fusion", width=4, hidden_size=8)
    b = m.lstm.biases.data
    assert np.allclose(b[8:16], 1.0)
    assert np.allclose(np.delete(b, np.s_[8:16]), 0.0)


def test_outputs_bounded_open_unit_interval():
    rng = np.random.default_rng(12)
    fusion = init_params(seed=0, kind="fusion", width=4, hidden_size=4)
    base = init_params(seed=0, kind="baseline", width=4)
    out_f = fusion_forward(Tensor(_rand_seq(rng, 4)), fusion).data
    out_b = baseline_forward(Tensor(rng.random((4, 10, 32, 32))), base).data
    for out in (out_f, out_b):
        assert out.min() > 0.0 and out.max() < 1.0


def test_weight_sharing_accumulates_encoder_grads():
    # CNN A runs on all 10 frames; a frame-count-weighted loss must produce
    # 10x the gradient of the single-frame application on identical frames
    rng = np.random.default_rng(7)
    m = init_params(seed=1, kind="fusion", width=4, hidden_size=4)
    frame = rng.random((1, 10, 32, 32))

    enc10 = m.cnn_a.forward(Tensor(np.repeat(frame, 10, axis=0)), False)
    enc10.sum().backward()
    g10 = m.cnn_a.convs[0].weights.grad.copy()
    for p in m.parameters():
        p.zero_grad()
    enc1 = m.cnn_a.forward(Tensor(frame), False)
    enc1.sum().backward()
    g1 = m.cnn_a.convs[0].weights.grad
    assert np.allclose(g10, 10.0 * g1, rtol=1e-10)


def test_fusion_sensitive_to_history_order():
    rng = np.random.default_rng(21)
    m = init_params(seed=2, kind="fusion", width=4, hidden_size=8)
    seq = _rand_seq(rng)
    shuffled = seq.copy()
    shuffled[[0, 8]] = shuffled[[8, 0]]  # swap two history frames
    out = fusion_forward(Tensor(seq), m).data
    out_s = fusion_forward(Tensor(shuffled), m).data
    assert np.abs(out - out_s).max() > 1e-8


def test_baseline_ignores_history_entirely():
    rng = np.random.default_rng(22)
    b = init_params(seed=2, kind="baseline", width=4)
    seq = _rand_seq(rng)
    scrambled = seq.copy()
    scrambled[:9] = rng.random((9, 10, 32, 32))
    out = forward(b, Tensor(seq)).data
    out_s = forward(b, Tensor(scrambled)).data
    assert np.abs(out - out_s).max() == 0.0


def test_lstm_is_per_pixel_independent():
    # permuting pixels of every encoded frame must commute with the LSTM;
    # verified end to end on a model whose conv stages are 1x1-like
    # identity kernels so pixels never mix
    m = init_params(seed=5, kind="fusion", width=4, hidden_size=4)
    for conv in m.cnn_a.convs + [m.cnn_a.final, m.deconv, m.cnn_b]:
        w = np.zeros_like(conv.weights.data)
        w[..., 1, 1] = 1.0 / w.shape[1]
        conv.weights.data = w
        conv.bias.data = np.zeros_like(conv.bias.data)
    for bn in m.cnn_a.bns:
        bn.running_mean[...] = 0.0
        bn.running_var[...] = 1.0
    rng = np.random.default_rng(31)
    seq = _rand_seq(rng)
    perm = rng.permutation(32)
    out = fusion_forward(Tensor(seq), m, training=False).data
    out_p = fusion_forward(Tensor(seq[..., perm, :]), m,
                           training=False).data
    assert np.abs(out[perm, :] - out_p).max() <= 1e-12


def test_batched_forward_matches_single():
    rng = np.random.default_rng(41)
    m = init_params(seed=4, kind="fusion", width=4, hidden_size=4)
    seqs = _rand_seq(rng, 3)
    batched = fusion_forward(Tensor(seqs), m, training=False).data
    for i in range(3):
        single = fusion_forward(Tensor(seqs[i]), m, training=False).data
        assert np.abs(batched[i] - single).max() <= 1e-12


def test_forward_rejects_bad_shapes():
    m = init_params(seed=0, kind="fusion", width=4, hidden_size=4)
    with pytest.raises(ValueError):
        fusion_forward(Tensor(np.zeros((9, 10, 32, 32))), m)
    with pytest.raises(ValueError):
        fusion_forward(Tensor(np.zeros((10, 9, 32, 32))), m)


@pytest.mark.parametrize("kind", ["fusion", "baseline"])
def test_checkpoint_round_trip_byte_exact(kind, tmp_path):
    m = init_params(seed=9, kind=kind, width=4, hidden_size=4)
    # make buffers nontrivial
    rng = np.random.default_rng(2)
    for buf in m.buffers():
        buf[...] = rng.random(buf.shape)
    p1 = os.path.join(tmp_path, "a.ckpt")
    p2 = os.path.join(tmp_path, "b.ckpt")
    save_checkpoint(m, p1)
    restored = load_checkpoint(p1)
    save_checkpoint(restored, p2)
    with open(p1, "rb") as f1, open(p2, "rb") as f2:
        assert f1.read() == f2.read()
    rng2 = np.random.default_rng(55)
    x = Tensor(_rand_seq(rng2))
    assert np.array_equal(forward(m, x).data, forward(restored, x).data)


def test_checkpoint_rejects_corruption(tmp_path):
    m = init_params(seed=0, kind="baseline", width=4)
    path = os.path.join(tmp_path, "m.ckpt")
    save_checkpoint(m, path)
    with open(path, "ab") as fh:
        fh.write(b"\x00" * 8)
    with pytest.raises(ValueError):
        load_checkpoint(path)
