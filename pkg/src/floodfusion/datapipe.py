"""Chip construction and feature engineering.

Covers fractional upscaling of fine binary water masks, normalization of the
dynamic (optical) and static (elevation / slope / HAND) bands, 10-step
sequence assembly, completeness filtering, dihedral augmentation and
leave-one-year-out splits.

On-disk formats
---------------
Chip: ``<stem>.bin`` raw little-endian float32, features [10,10,32,32] then
target [32,32], with a ``<stem>.json`` sidecar (shape, band order, date,
year, grid_pos, schema version).  Manifest: one JSON file listing chip
records; per-year counts are recomputed and verified on load.
"""
from __future__ import annotations

import datetime
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

CHIP_SCHEMA = 1
MANIFEST_SCHEMA = 1
BAND_ORDER = ["red", "NIR", "blue", "green", "SWIR1", "SWIR2", "SWIR3",
              "elevation", "slope", "HAND"]
COMPOSITE_CADENCE_DAYS = 8
SEQ_LEN = 10
CHIP_SIZE = 32

MODIS_RANGE = (-100.0, 16000.0)
ELEVATION_RANGE_M = 100.0


class MissingCompositeError(ValueError):
    """A required 8-day composite is absent from the assembly window."""


# ---------------------------------------------------------------------------
# feature engineering


def fractional_upscale(mask: np.ndarray, factor: int) -> np.ndarray:
    """Average a fine binary mask into coarse cells of `factor` x `factor`.

    10 m -> 500 m uses factor 50, so each coarse value is the mean over
    2,500 fine pixels.  Dimensions must divide evenly; there is no
    partial-cell policy.
    """
    mask = np.asarray(mask, dtype=np.float64)
    hf, wf = mask.shape
    if hf % factor or wf % factor:
        raise ValueError(
            f"mask dims {mask.shape} not divisible by factor {factor}")
    return mask.reshape(hf // factor, factor, wf // factor, factor).mean(
        axis=(1, 3))


def normalize_modis(raw_band: np.ndarray) -> np.ndarray:
    """Min-max normalize a reflectance band over the sensor range
    (-100, 16000), clamping anything outside it."""
    raw = np.asarray(raw_band, dtype=np.float64)
    lo, hi = MODIS_RANGE
    n_out = int(np.sum((raw < lo) | (raw > hi)))
    if n_out:
        logger.warning("clamped %d out-of-range reflectance values", n_out)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def normalize_elevation(elev_m: np.ndarray) -> np.ndarray:
    """Scale elevation by the 0-100 m range used for Bangladesh, clamped."""
    return np.clip(np.asarray(elev_m, dtype=np.float64) / ELEVATION_RANGE_M,
                   0.0, 1.0)


def normalize_slope(slope_ratio: np.ndarray) -> np.ndarray:
    """tanh of the (dimensionless rise/run) slope; lands in [0, 1)."""
    slope = np.asarray(slope_ratio, dtype=np.float64)
    if np.any(slope < 0):
        raise ValueError("slope must be nonnegative")
    return np.tanh(slope)


def normalize_hand(hand_m: np.ndarray, h_max: float = 100.0) -> np.ndarray:
    """log1p then min-max over [0, h_max]; log1p keeps hand=0 defined."""
    if h_max <= 0:
        raise ValueError("h_max must be positive")
    hand = np.asarray(hand_m, dtype=np.float64)
    return np.clip(np.log1p(hand) / np.log1p(h_max), 0.0, 1.0)


# ---------------------------------------------------------------------------
# chips


@dataclass
class Chip:
    """One training sample: a 10-step, 10-band, 32x32 feature sequence
    (timesteps oldest to newest) with its fractional target and metadata."""
    features: np.ndarray  # [10, 10, 32, 32]
    target: np.ndarray    # [32, 32]
    year: int
    date: datetime.date
    grid_pos: tuple

    def validate(self):
        if self.features.shape != (SEQ_LEN, len(BAND_ORDER), CHIP_SIZE,
                                   CHIP_SIZE):
            raise ValueError(f"bad feature shape {self.features.shape}")
        if self.target.shape != (CHIP_SIZE, CHIP_SIZE):
            raise ValueError(f"bad target shape {self.target.shape}")
        finite = self.target[np.isfinite(self.target)]
        if np.any(self.features < 0) or np.any(self.features > 1):
            raise ValueError("feature values outside [0, 1]")
        if finite.size and (finite.min() < 0 or finite.max() > 1):
            raise ValueError("target values outside [0, 1]")


def assemble_sequence(date_t: datetime.date, composites: dict,
                      statics: np.ndarray) -> np.ndarray:
    """Build the [10,10,32,32] feature stack ending at `date_t`.

    `composites` maps composite start dates to normalized [7,32,32] optical
    stacks on an 8-day cadence; `statics` is the normalized [3,32,32]
    elevation / slope / HAND stack, repeated identically at every timestep.
    The window covers 10 consecutive composites (80 days).  A missing
    composite raises :class:`MissingCompositeError` so the caller can
    exclude and log the chip.
    """
    if statics.shape[0] != 3:
        raise ValueError("statics must have 3 bands")
    anchor = None
    for start in composites:
        if start <= date_t < start + datetime.timedelta(
                days=COMPOSITE_CADENCE_DAYS):
            anchor = start
            break
    if anchor is None:
        raise MissingCompositeError(
            f"no composite overlaps {date_t.isoformat()}")
    frames = []
    for back in range(SEQ_LEN - 1, -1, -1):
        d = anchor - datetime.timedelta(days=back * COMPOSITE_CADENCE_DAYS)
        if d not in composites:
            raise MissingCompositeError(
                f"composite {d.isoformat()} missing from window ending "
                f"{anchor.isoformat()}")
        optical = np.asarray(composites[d], dtype=np.float64)
        if optical.shape[0] != 7:
            raise ValueError("composites must have 7 optical bands")
        frames.append(np.concatenate([optical, statics], axis=0))
    return np.stack(frames, axis=0)


# ---------------------------------------------------------------------------
# dihedral augmentation


def apply_dihedral(arr: np.ndarray, g: int) -> np.ndarray:
    """Apply symmetry `g` of the square to the last two axes.

    g = flip*4 + k: rotate 90 degrees counterclockwise k times, then
    mirror the column axis if flip is set.
    """
    if not 0 <= g <= 7:
        raise ValueError(f"dihedral index must be in 0..7, got {g}")
    out = np.rot90(arr, k=g % 4, axes=(-2, -1))
    if g >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def inverse_dihedral(g: int) -> int:
    """Index of the inverse transform (reflections are involutions)."""
    if g >= 4:
        return g
    return (4 - g) % 4


def compose_dihedral(g2: int, g1: int) -> int:
    """Index of 'apply g1, then g2'."""
    f1, k1 = g1 // 4, g1 % 4
    f2, k2 = g2 // 4, g2 % 4
    f = (f1 + f2) % 2
    k = (k1 + k2) % 4 if f1 == 0 else (k1 - k2) % 4
    return f * 4 + k


def dihedral_augment(chip: Chip, g: int) -> Chip:
    """Apply the same spatial transform to every feature plane of every
    timestep and the target; temporal order is untouched."""
    return Chip(features=apply_dihedral(chip.features, g),
                target=apply_dihedral(chip.target, g),
                year=chip.year, date=chip.date, grid_pos=chip.grid_pos)


# ---------------------------------------------------------------------------
# chip files


def save_chip(chip: Chip, stem: str):
    chip.validate()
    sidecar = {
        "schema_version": CHIP_SCHEMA,
        "shape": list(chip.features.shape),
        "band_order": BAND_ORDER,
        "date": chip.date.isoformat(),
        "year": chip.year,
        "grid_pos": list(chip.grid_pos),
        "dtype": "<f4",
    }
    with open(stem + ".bin", "wb") as fh:
        fh.write(chip.features.astype("<f4").tobytes())
        fh.write(chip.target.astype("<f4").tobytes())
    with open(stem + ".json", "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def load_chip(stem: str) -> Chip:
    with open(stem + ".json") as fh:
        sidecar = json.load(fh)
    if sidecar.get("schema_version") != CHIP_SCHEMA:
        raise ValueError(f"unsupported chip schema in {stem}.json")
    if sidecar.get("band_order") != BAND_ORDER:
        raise ValueError(f"unexpected band order in {stem}.json")
    shape = tuple(sidecar["shape"])
    nfeat = int(np.prod(shape))
    hw = shape[-2] * shape[-1]
    raw = np.fromfile(stem + ".bin", dtype="<f4")
    if raw.size != nfeat + hw:
        raise ValueError(f"chip blob size mismatch for {stem}.bin")
    return Chip(
        features=raw[:nfeat].reshape(shape).astype(np.float64),
        target=raw[nfeat:].reshape(shape[-2:]).astype(np.float64),
        year=int(sidecar["year"]),
        date=datetime.date.fromisoformat(sidecar["date"]),
        grid_pos=tuple(sidecar["grid_pos"]),
    )


# ---------------------------------------------------------------------------
# manifest and splits


@dataclass
class ChipRecord:
    path: str
    year: int
    date: datetime.date
    grid_pos: tuple
    complete: bool = True


@dataclass
class ChipManifest:
    chips: list
    root: str = "."

    def year_counts(self) -> dict:
        counts = {}
        for rec in self.chips:
            counts[rec.year] = counts.get(rec.year, 0) + 1
        return counts

    def years(self):
        return sorted({rec.year for rec in self.chips})

    def __len__(self):
        return len(self.chips)


def build_manifest(chip_dir: str, strict: bool = True) -> ChipManifest:
    """Scan a chip directory, validate sidecars, and keep only complete
    chips.  Strict completeness admits zero missing target pixels; the
    lenient rule tolerates one.
    """
    records = []
    stems = sorted(os.path.splitext(f)[0] for f in os.listdir(chip_dir)
                   if f.endswith(".json") and f != "manifest.json")
    for stem in stems:
        chip = load_chip(os.path.join(chip_dir, stem))
        missing = int(np.sum(~np.isfinite(chip.target)))
        complete = missing == 0 if strict else missing <= 1
        if not complete:
            logger.info("excluding incomplete chip %s (%d missing)",
                        stem, missing)
            continue
        records.append(ChipRecord(path=stem + ".bin", year=chip.year,
                                  date=chip.date, grid_pos=chip.grid_pos))
    return ChipManifest(chips=records, root=chip_dir)


def save_manifest(manifest: ChipManifest, path: str):
    doc = {
        "schema_version": MANIFEST_SCHEMA,
        "year_counts": {str(y): n for y, n in manifest.year_counts().items()},
        "chips": [
            {"path": rec.path, "year": rec.year, "date": rec.date.isoformat(),
             "grid_pos": list(rec.grid_pos), "complete": rec.complete}
            for rec in manifest.chips
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_manifest(path: str) -> ChipManifest:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != MANIFEST_SCHEMA:
        raise ValueError(f"unsupported manifest schema in {path}")
    records = [
        ChipRecord(path=c["path"], year=int(c["year"]),
                   date=datetime.date.fromisoformat(c["date"]),
                   grid_pos=tuple(c["grid_pos"]),
                   complete=bool(c.get("complete", True)))
        for c in doc["chips"]
    ]
    manifest = ChipManifest(chips=records, root=os.path.dirname(path) or ".")
    stated = {int(y): n for y, n in doc.get("year_counts", {}).items()}
    if stated != manifest.year_counts():
        raise ValueError(f"manifest year counts disagree with records in "
                         f"{path}")
    return manifest


def load_manifest_chip(manifest: ChipManifest, rec: ChipRecord) -> Chip:
    stem = os.path.join(manifest.root, os.path.splitext(rec.path)[0])
    return load_chip(stem)


@dataclass
class CVSplit:
    leave_out_year: int
    train_ids: list = field(default_factory=list)
    val_ids: list = field(default_factory=list)


def cv_split(manifest: ChipManifest, leave_out_year: int) -> CVSplit:
    """Validation gets every chip of `leave_out_year`; training the rest."""
    if leave_out_year not in manifest.year_counts():
        raise ValueError(
            f"year {leave_out_year} not present in manifest "
            f"(has {manifest.years()})")
    split = CVSplit(leave_out_year=leave_out_year)
    for i, rec in enumerate(manifest.chips):
        (split.val_ids if rec.year == leave_out_year
         else split.train_ids).append(i)
    return split
