"""Training loop: RMSE loss, Ranger (rectified Adam + lookahead) and plain
Adam optimizers, the 3-phase learning-rate schedule, and the
leave-one-year-out cross-validation driver.
"""
from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import evalmetrics
from .autograd import Tensor, no_grad
from .datapipe import ChipManifest, apply_dihedral, cv_split, \
    load_manifest_chip
from .model import ArchSpec, BaselineCNN, FusionModel, forward, \
    save_checkpoint


def rmse_loss(pred: Tensor, target) -> Tensor:
    """sqrt(mean((pred - target)^2)); the sqrt backward is floored near the
    pred == target singularity so an exact fit cannot produce NaN grads."""
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(
            f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        raise ValueError("empty batch")
    return ((pred - target) ** 2).mean().sqrt()


# ---------------------------------------------------------------------------
# optimizers


class Adam:
    """Adam with bias correction; base class for the rectified variant."""

    rectify = False

    def __init__(self, params, betas=(0.95, 0.999), eps=1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr: float):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.t += 1
        b1, b2, t = self.b1, self.b2, self.t
        if self.rectify:
            rho_inf = 2.0 / (1.0 - b2) - 1.0
            b2t = b2 ** t
            rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t)
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1 ** t)
            if self.rectify and rho_t <= 4.0:
                # variance of the adaptive term intractable: momentum only
                p.data = p.data - lr * mhat
                continue
            step = mhat / (np.sqrt(v / (1.0 - b2 ** t)) + self.eps)
            if self.rectify:
                r = math.sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                              / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                step = r * step
            p.data = p.data - lr * step


class Ranger(Adam):
    """Rectified Adam wrapped in lookahead: every `k` fast steps the slow
    weights blend toward the fast ones by `alpha` and the fast weights are
    reset onto the slow trajectory.  `k=None` disables lookahead."""

    rectify = True

    def __init__(self, params, betas=(0.95, 0.999), eps=1e-8, k=6,
                 alpha=0.5):
        super().__init__(params, betas=betas, eps=eps)
        self.k = k
        self.alpha = alpha
        self.slow = ([p.data.copy() for p in self.params]
                     if k is not None else None)

    def step(self, lr: float):
        super().step(lr)
        if self.k is not None and self.t % self.k == 0:
            for p, s in zip(self.params, self.slow):
                s += self.alpha * (p.data - s)
                p.data = s.copy()


def make_optimizer(name: str, params):
    if name == "ranger":
        return Ranger(params)
    if name == "adam":
        return Adam(params)
    raise ValueError(f"unknown optimizer: {name!r}")


# ---------------------------------------------------------------------------
# configuration


DEFAULT_SCHEDULE = [(20, 1e-3), (5, 1e-4), (5, 1e-5)]


@dataclass
class TrainConfig:
    leave_out_year: int
    lr_schedule: list = field(default_factory=lambda: list(DEFAULT_SCHEDULE))
    batch_size: int = 16
    optimizer: str = "ranger"
    seed: int = 0
    augment: bool = True
    model_kind: str = "fusion"
    hidden_size: int = 32
    width: int = 128

    def __post_init__(self):
        lrs = [lr for _, lr in self.lr_schedule]
        if any(e <= 0 for e, _ in self.lr_schedule):
            raise ValueError("schedule epochs must be positive")
        if any(lr <= 0 for lr in lrs):
            raise ValueError("learning rates must be positive")
        if any(b >= a for a, b in zip(lrs, lrs[1:])) and len(lrs) > 1:
            raise ValueError("learning rates must strictly decrease")
        if self.model_kind not in ("fusion", "baseline"):
            raise ValueError(f"unknown model kind: {self.model_kind!r}")

    def phase_lrs(self):
        """Learning rate applied at every epoch, in order."""
        out = []
        for epochs, lr in self.lr_schedule:
            out += [lr] * epochs
        return out


@dataclass
class TrainResult:
    model: object
    log: list                 # rows of dicts, one per epoch
    checkpoint_path: str
    train_backward_calls: int = 0
    val_backward_calls: int = 0


def _load_split_arrays(manifest, ids):
    feats = np.empty((len(ids), 10, 10, 32, 32), dtype=np.float32)
    targets = np.empty((len(ids), 32, 32), dtype=np.float32)
    for row, i in enumerate(ids):
        chip = load_manifest_chip(manifest, manifest.chips[i])
        feats[row] = chip.features
        targets[row] = chip.target
    return feats, targets


def predict(model, feats: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Batched inference (running-stats batchnorm, no graph recording)."""
    out = np.empty((len(feats), 32, 32))
    with no_grad():
        for lo in range(0, len(feats), batch_size):
            batch = Tensor(feats[lo:lo + batch_size].astype(np.float64))
            out[lo:lo + batch_size] = forward(model, batch,
                                              training=False).data
    return out


def train(config: TrainConfig, manifest: ChipManifest,
          out_dir: str) -> TrainResult:
    """One cross-validation fold: 3-phase schedule, per-epoch CSV log,
    final checkpoint.  Fully seeded; validation data never sees backward."""
    if len(manifest.years()) < 2:
        raise ValueError("manifest must cover at least 2 years")
    os.makedirs(out_dir, exist_ok=True)
    split = cv_split(manifest, config.leave_out_year)
    if not split.train_ids or not split.val_ids:
        raise ValueError("empty train or validation split")

    rng = np.random.default_rng([config.seed, 977])
    arch = ArchSpec(kind=config.model_kind, width=config.width,
                    hidden_size=config.hidden_size, seed=config.seed)
    model = FusionModel(arch) if config.model_kind == "fusion" \
        else BaselineCNN(arch)
    opt = make_optimizer(config.optimizer, model.parameters())

    train_x, train_y = _load_split_arrays(manifest, split.train_ids)
    val_x, val_y = _load_split_arrays(manifest, split.val_ids)

    stem = os.path.join(out_dir,
                        f"{config.model_kind}_loo{config.leave_out_year}")
    result = TrainResult(model=model, log=[], checkpoint_path=stem + ".ckpt")
    n = len(train_x)

    for epoch, lr in enumerate(config.phase_lrs()):
        t0 = time.time()
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, config.batch_size):
            ids = order[lo:lo + config.batch_size]
            xb = train_x[ids].astype(np.float64)
            yb = train_y[ids].astype(np.float64)
            if config.augment:
                for j in range(len(ids)):
                    g = int(rng.integers(8))
                    if g:
                        xb[j] = apply_dihedral(xb[j], g)
                        yb[j] = apply_dihedral(yb[j], g)
            loss = rmse_loss(forward(model, Tensor(xb), training=True), yb)
            opt.zero_grad()
            loss.backward()
            result.train_backward_calls += 1
            opt.step(lr)
            losses.append(loss.item())

        val_pred = predict(model, val_x, config.batch_size)
        val_rmse = float(np.sqrt(np.mean((val_pred - val_y) ** 2)))
        result.log.append({
            "epoch": epoch,
            "phase_lr": lr,
            "train_rmse": float(np.mean(losses)),
            "val_rmse": val_rmse,
            "wall_seconds": time.time() - t0,
        })

    with open(stem + "_log.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "epoch", "phase_lr", "train_rmse", "val_rmse", "wall_seconds"])
        writer.writeheader()
        writer.writerows(result.log)
    save_checkpoint(model, result.checkpoint_path)
    return result


def run_cv(base_config: TrainConfig, manifest: ChipManifest, out_dir: str,
           kinds=("fusion", "baseline")):
    """Train one fold per manifest year for each model kind; returns rows
    [{year, model, r2, slope, spearman, rmse}, ...] for the benchmark table."""
    from dataclasses import replace

    rows = []
    for year in manifest.years():
        for kind in kinds:
            cfg = replace(base_config, leave_out_year=year, model_kind=kind)
            res = train(cfg, manifest, out_dir)
            split = cv_split(manifest, year)
            val_x, val_y = _load_split_arrays(manifest, split.val_ids)
            pred = predict(res.model, val_x, cfg.batch_size)
            report = evalmetrics.compute_metrics(pred.ravel(),
                                                 val_y.ravel())
            rows.append({
                "year": year, "model": kind, "r2": report.r2,
                "slope": report.slope, "spearman": report.spearman,
                "rmse": report.rmse,
            })
    return rows


def write_cv_table(rows, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "year", "model", "r2", "slope", "spearman", "rmse"])
        writer.writeheader()
        writer.writerows(rows)
