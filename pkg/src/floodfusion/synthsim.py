"""Synthetic seasonal-inundation scene generator.

Produces chips with the production shapes and statistics (10-step, 10-band,
32x32 sequences with fractional targets) from a latent terrain + hydrograph
world that is its own ground-truth oracle: the fine water mask is exactly
``elevation < water_level`` and every target is the block mean of that mask.

Cloud occlusion is what makes temporal history informative: every composite
draws an independent blob-shaped cloud mask in which each pixel is occluded
with marginal probability ``cloud_prob`` and its optical bands replaced by a
fixed bright cloud value.  Blobs are wider than the CNN receptive field, so
an occluded neighborhood cannot be filled in spatially, while a model that
looks back through the 9 independently clouded history frames usually finds
a clear view.
"""
from __future__ import annotations

import datetime
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, minimum_filter

from .datapipe import (
    CHIP_SIZE,
    COMPOSITE_CADENCE_DAYS,
    Chip,
    ChipManifest,
    build_manifest,
    fractional_upscale,
    normalize_elevation,
    normalize_slope,
    save_chip,
    save_manifest,
)

CLOUD_VALUE = 0.85
CLOUD_BLOB_SIGMA = 16.0   # coarse pixels; half a chip edge
SEQ_LEN = 10


def cloud_mask(rng, shape, prob: float,
               sigma: float = CLOUD_BLOB_SIGMA) -> np.ndarray:
    """Blob-shaped boolean occlusion mask with marginal coverage `prob`.

    Thresholds a smoothed gaussian field at its own empirical quantile, so
    the realized cloud fraction is `prob` up to rounding for every draw.
    """
    if prob <= 0:
        return np.zeros(shape, dtype=bool)
    field = gaussian_filter(rng.standard_normal(shape), sigma)
    return field < np.quantile(field, prob)


@dataclass
class SceneParams:
    seed: int = 0
    grid_chips: int = 4              # chips per side
    years: list = field(default_factory=lambda: [2017, 2018, 2019])
    composites_per_year: int = 46    # 8-day cadence
    monsoon_peak_day: int = 210
    monsoon_amplitude: float = 16.0
    irrigation_peak_day: int = 105
    irrigation_amplitude: float = 6.0
    cloud_prob: float = 0.5
    noise_scale: float = 0.02
    fine_factor: int = 10            # fine pixels per coarse cell edge
    relief: float = 60.0             # max elevation of the terrain, meters
    base_level: float = 18.0         # dry-season water level, meters
    hand_max: float = 30.0
    sequence_stride: int = 3         # anchor-date spacing, in composites

    def __post_init__(self):
        if not 0.0 <= self.cloud_prob < 1.0:
            raise ValueError("cloud_prob must be in [0, 1)")
        if self.monsoon_amplitude < 0 or self.irrigation_amplitude < 0:
            raise ValueError("amplitudes must be nonnegative")


# ---------------------------------------------------------------------------
# terrain


@dataclass
class LatentScene:
    params: SceneParams
    elevation: np.ndarray   # fine grid, meters, >= 0
    slope: np.ndarray       # fine rise/run ratio
    hand: np.ndarray        # fine height-above-local-minimum proxy, >= 0

    def water_level(self, year: int, day_of_year: int) -> float:
        return hydrograph(day_of_year, self.params, year=year)

    def water_mask(self, year: int, day_of_year: int) -> np.ndarray:
        return self.elevation < self.water_level(year, day_of_year)


def gen_terrain(seed: int, size: int, relief: float = 60.0,
                fine_factor: int = 10) -> LatentScene:
    """Smoothed octave-noise elevation with derived slope and HAND proxy.

    `size` is the fine grid edge; `relief` = 0 gives perfectly flat terrain
    (slope and HAND identically zero).
    """
    rng = np.random.default_rng([seed, 71])
    elev = np.zeros((size, size))
    if relief > 0:
        amp = 1.0
        for octave in range(4):
            sigma = max(size / (6 * 2 ** octave), 1.0)
            layer = gaussian_filter(rng.standard_normal((size, size)), sigma)
            std = layer.std()
            if std > 0:
                elev += amp * layer / std
            amp *= 0.5
        elev -= elev.min()
        peak = elev.max()
        if peak > 0:
            elev *= relief / peak
    cell_m = 500.0 / fine_factor
    gy, gx = np.gradient(elev, cell_m)
    slope = np.hypot(gy, gx)
    window = 4 * fine_factor + 1
    hand = elev - minimum_filter(elev, size=window)
    params = SceneParams(seed=seed, relief=relief, fine_factor=fine_factor)
    return LatentScene(params=params, elevation=elev, slope=slope, hand=hand)


# ---------------------------------------------------------------------------
# hydrograph


def _bump(day: float, center: float, width: float) -> float:
    return float(np.exp(-0.5 * ((day - center) / width) ** 2))


def hydrograph(day_of_year: int, p: SceneParams, year: int = None) -> float:
    """Annual water level: base + spring irrigation bump + monsoon bump,
    with a seeded year-to-year scaling of the monsoon peak."""
    if not 1 <= day_of_year <= 366:
        raise ValueError(f"day_of_year out of range: {day_of_year}")
    monsoon_amp = p.monsoon_amplitude
    irrigation_amp = p.irrigation_amplitude
    if year is not None:
        yr_rng = np.random.default_rng([p.seed, int(year)])
        monsoon_amp *= 0.75 + 0.5 * yr_rng.random()
        irrigation_amp *= 0.75 + 0.5 * yr_rng.random()
    return (p.base_level
            + irrigation_amp * _bump(day_of_year, p.irrigation_peak_day, 18.0)
            + monsoon_amp * _bump(day_of_year, p.monsoon_peak_day, 32.0))


# ---------------------------------------------------------------------------
# rendering


def make_scene(p: SceneParams) -> LatentScene:
    size = p.grid_chips * CHIP_SIZE * p.fine_factor
    scene = gen_terrain(p.seed, size, relief=p.relief,
                        fine_factor=p.fine_factor)
    scene.params = p
    return scene


def _static_bands(scene: LatentScene) -> np.ndarray:
    """Normalized [3, G, G] elevation / slope / HAND at coarse resolution."""
    p = scene.params
    f = p.fine_factor
    elev = normalize_elevation(fractional_upscale(scene.elevation, f))
    slope = normalize_slope(fractional_upscale(scene.slope, f))
    # log before the mean resampling, min-max after
    hand = np.clip(fractional_upscale(np.log1p(scene.hand), f)
                   / np.log1p(p.hand_max), 0.0, 1.0)
    return np.stack([elev, slope, hand])


def render_composite(scene: LatentScene, date: datetime.date,
                     p: SceneParams = None):
    """Render one 8-day composite over the whole coarse grid.

    Returns (optical [7, G, G], target [G, G]) where G = grid_chips * 32.
    The target is the exact block mean of the fine water mask; occluded
    pixels carry CLOUD_VALUE in every optical band.
    """
    p = p or scene.params
    day = min(date.timetuple().tm_yday, 366)
    mask = scene.water_mask(date.year, day)
    target = fractional_upscale(mask, p.fine_factor)

    statics = _static_bands(scene)
    veg = np.clip(1.0 - statics[2], 0.0, 1.0)  # lush where drainage is near
    wf = target
    optical = np.stack([
        0.30 - 0.10 * wf + 0.05 * veg,   # red
        0.60 - 0.45 * wf + 0.25 * veg,   # NIR: water absorbs strongly
        0.25 - 0.05 * wf + 0.02 * veg,   # blue
        0.30 - 0.08 * wf + 0.10 * veg,   # green
        0.50 - 0.40 * wf + 0.05 * veg,   # SWIR1
        0.45 - 0.35 * wf + 0.04 * veg,   # SWIR2
        0.40 - 0.30 * wf + 0.03 * veg,   # SWIR3
    ])
    rng = np.random.default_rng([p.seed, date.year, date.timetuple().tm_yday])
    if p.noise_scale > 0:
        optical = optical + p.noise_scale * rng.standard_normal(optical.shape)
    optical = np.clip(optical, 0.0, 1.0)
    if p.cloud_prob > 0:
        occluded = cloud_mask(rng, wf.shape, p.cloud_prob)
        optical[:, occluded] = CLOUD_VALUE
    return optical, target


def composite_dates(year: int, p: SceneParams):
    """Start dates of the year's composites: day-of-year 1, 9, 17, ..."""
    first = datetime.date(year, 1, 1)
    return [first + datetime.timedelta(days=i * COMPOSITE_CADENCE_DAYS)
            for i in range(p.composites_per_year)]


# ---------------------------------------------------------------------------
# dataset generation


def gen_dataset(p: SceneParams, out_dir: str) -> ChipManifest:
    """Render the scene, assemble chip sequences and write them in the
    standard chip + manifest format, indistinguishable from ingested data."""
    os.makedirs(out_dir, exist_ok=True)
    scene = make_scene(p)
    statics = _static_bands(scene)
    g = p.grid_chips

    for year in p.years:
        dates = composite_dates(year, p)
        rendered = [render_composite(scene, d, p) for d in dates]
        for anchor in range(SEQ_LEN - 1, len(dates), p.sequence_stride):
            window = rendered[anchor - SEQ_LEN + 1:anchor + 1]
            for row in range(g):
                for col in range(g):
                    sl = (slice(row * CHIP_SIZE, (row + 1) * CHIP_SIZE),
                          slice(col * CHIP_SIZE, (col + 1) * CHIP_SIZE))
                    frames = [np.concatenate(
                        [optical[(slice(None),) + sl], statics[(slice(None),) + sl]],
                        axis=0) for optical, _ in window]
                    chip = Chip(
                        features=np.stack(frames),
                        target=window[-1][1][sl],
                        year=year,
                        date=dates[anchor],
                        grid_pos=(row, col),
                    )
                    stem = os.path.join(
                        out_dir,
                        f"chip_{year}_{dates[anchor].timetuple().tm_yday:03d}"
                        f"_{row}_{col}")
                    save_chip(chip, stem)
    manifest = build_manifest(out_dir)
    save_manifest(manifest, os.path.join(out_dir, "manifest.json"))
    return manifest
