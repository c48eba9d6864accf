"""Ensemble historical inference.

An ensemble is the set of cross-validated checkpoints; the prediction is the
unweighted elementwise mean of the member outputs, with the per-pixel
member spread (max - min) emitted as an uncertainty layer.
"""
from __future__ import annotations

import datetime
import logging
from dataclasses import dataclass

import numpy as np

from .datapipe import ChipManifest, load_manifest_chip
from .model import load_checkpoint
from .trainer import predict

logger = logging.getLogger(__name__)

HISTORY_DAYS = 9 * 8  # span of the 9 history composites before time t


@dataclass
class Ensemble:
    members: list  # loaded models sharing one architecture spec

    @classmethod
    def from_checkpoints(cls, paths):
        if not paths:
            raise ValueError("ensemble needs at least one checkpoint")
        members = [load_checkpoint(p) for p in paths]
        # seed is an init detail, not a compatibility property
        archs = [{k: v for k, v in m.arch.to_dict().items() if k != "seed"}
                 for m in members]
        for a in archs[1:]:
            if a != archs[0]:
                raise ValueError(
                    f"ensemble architecture mismatch: {archs[0]} vs {a}")
        return cls(members=members)


@dataclass
class InferenceRecord:
    date: datetime.date
    year: int
    grid_pos: tuple
    mean: np.ndarray    # [32, 32] ensemble-mean fraction map
    spread: np.ndarray  # [32, 32] per-pixel member max - min


def _history_overlaps(date, exclude_range):
    if exclude_range is None:
        return False
    start, end = exclude_range
    win_start = date - datetime.timedelta(days=HISTORY_DAYS)
    return win_start <= end and date >= start


def ensemble_infer(ensemble: Ensemble, manifest: ChipManifest,
                   batch_size: int = 16, exclude_range=None):
    """Predict every chip in the manifest with the full ensemble.

    Chips whose 10-composite history window overlaps `exclude_range`
    (a (start, end) date pair for corrupted source windows) are skipped
    and logged.  Returns a list of :class:`InferenceRecord`.
    """
    kept = []
    for rec in manifest.chips:
        if _history_overlaps(rec.date, exclude_range):
            logger.info("skipping chip %s: history overlaps excluded range",
                        rec.path)
            continue
        kept.append(rec)
    if not kept:
        return []

    feats = np.empty((len(kept), 10, 10, 32, 32), dtype=np.float32)
    for i, rec in enumerate(kept):
        feats[i] = load_manifest_chip(manifest, rec).features

    preds = np.stack([predict(m, feats, batch_size)
                      for m in ensemble.members])
    mean = preds.mean(axis=0)
    spread = preds.max(axis=0) - preds.min(axis=0)
    return [
        InferenceRecord(date=rec.date, year=rec.year,
                        grid_pos=rec.grid_pos, mean=mean[i],
                        spread=spread[i])
        for i, rec in enumerate(kept)
    ]


def records_to_series_input(records) -> dict:
    """Group chip-mean fractions by date for aggregate_series."""
    by_date = {}
    for r in records:
        by_date.setdefault(r.date, []).append(float(r.mean.mean()))
    return by_date
