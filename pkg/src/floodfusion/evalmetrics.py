"""Evaluation metrics and result aggregations: R^2, regression slope,
Spearman rank correlation, RMSE, per-grid-cell error maps, median time
series with an interquartile band, and annual monsoon maxima.
"""
from __future__ import annotations

import csv
import json
import datetime
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass
class MetricReport:
    r2: float
    slope: float
    spearman: float
    rmse: float
    n_samples: int
    # slope regresses *predicted on observed*, so slope 1 = unbiased
    # amplitude; r2/slope/spearman are NaN when obs is constant
    slope_direction: str = "pred_on_obs"


def compute_metrics(pred, obs) -> MetricReport:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if pred.shape != obs.shape:
        raise ValueError(
            f"length mismatch: {pred.shape} vs {obs.shape}")
    n = pred.size
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(obs))):
        raise ValueError("inputs must be finite")
    rmse = float(np.sqrt(np.mean((pred - obs) ** 2)))

    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0.0:  # constant observations: correlation-style stats undefined
        return MetricReport(r2=float("nan"), slope=float("nan"),
                            spearman=float("nan"), rmse=rmse, n_samples=n)
    ss_res = float(np.sum((pred - obs) ** 2))
    r2 = 1.0 - ss_res / ss_tot

    obs_c = obs - obs.mean()
    slope = float(np.dot(obs_c, pred - pred.mean()) / np.dot(obs_c, obs_c))

    rp = rankdata(pred)  # average ranks on ties
    ro = rankdata(obs)
    rp_c = rp - rp.mean()
    ro_c = ro - ro.mean()
    denom = np.sqrt(np.dot(rp_c, rp_c) * np.dot(ro_c, ro_c))
    spearman = float(np.dot(rp_c, ro_c) / denom) if denom > 0 else float("nan")

    return MetricReport(r2=r2, slope=slope, spearman=spearman, rmse=rmse,
                        n_samples=n)


# ---------------------------------------------------------------------------
# per-cell error map


@dataclass
class ErrorMap:
    mean_error: np.ndarray  # per grid cell, mean(prediction - target)
    visits: np.ndarray      # integer visit counts
    excluded: np.ndarray    # boolean, visits below min_visits


def error_map(predictions, targets, positions, min_visits: int = 5,
              grid_shape=None) -> ErrorMap:
    """Accumulate mean signed error per chip-grid cell.

    `positions` holds (row, col) per sample; cells visited fewer than
    `min_visits` times are flagged excluded, mirroring the display rule
    that drops rarely seen chips.
    """
    positions = [tuple(p) for p in positions]
    if not (len(predictions) == len(targets) == len(positions)):
        raise ValueError("predictions, targets and positions must align")
    if grid_shape is None:
        grid_shape = (max(p[0] for p in positions) + 1,
                      max(p[1] for p in positions) + 1)
    acc = np.zeros(grid_shape)
    visits = np.zeros(grid_shape, dtype=np.int64)
    for pred, tgt, (r, c) in zip(predictions, targets, positions):
        acc[r, c] += float(np.mean(np.asarray(pred) - np.asarray(tgt)))
        visits[r, c] += 1
    mean = np.divide(acc, visits, out=np.zeros_like(acc),
                     where=visits > 0)
    return ErrorMap(mean_error=mean, visits=visits,
                    excluded=visits < min_visits)


# ---------------------------------------------------------------------------
# time series


@dataclass
class SeriesPoint:
    date: datetime.date
    median: float
    band_low: float   # 25th percentile
    band_high: float  # 75th percentile


def aggregate_series(chip_means_by_date: dict) -> list:
    """Per date: median of chip-mean fractions with an interquartile band.

    `chip_means_by_date` maps dates to iterables of chip-mean fractions.
    """
    out = []
    for date in sorted(chip_means_by_date):
        vals = np.asarray(list(chip_means_by_date[date]), dtype=np.float64)
        if vals.size == 0:
            raise ValueError(f"no chips for date {date}")
        lo, med, hi = np.percentile(vals, [25.0, 50.0, 75.0])
        out.append(SeriesPoint(date=date, median=float(med),
                               band_low=float(lo), band_high=float(hi)))
    return out


DEFAULT_MONSOON_WINDOW = ((6, 1), (10, 31))  # June 1 - October 31


def annual_monsoon_max(series, monsoon_window=DEFAULT_MONSOON_WINDOW) -> dict:
    """Max of the aggregate series inside each year's monsoon window.

    Years covered by the series but with no in-window samples map to None
    (flagged missing) so spring irrigation peaks are never mistaken for
    monsoon peaks.
    """
    (m0, d0), (m1, d1) = monsoon_window
    maxima = {}
    for pt in series:
        year = pt.date.year
        maxima.setdefault(year, None)
        start = datetime.date(year, m0, d0)
        end = datetime.date(year, m1, d1)
        if start <= pt.date <= end:
            if maxima[year] is None or pt.median > maxima[year]:
                maxima[year] = pt.median
    return maxima


# ---------------------------------------------------------------------------
# serialization


def report_to_csv_row(report: MetricReport) -> dict:
    return {"r2": report.r2, "slope": report.slope,
            "spearman": report.spearman, "rmse": report.rmse,
            "n_samples": report.n_samples}


def write_series_csv(series, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "median", "low", "high"])
        for pt in series:
            writer.writerow([pt.date.isoformat(), repr(pt.median),
                             repr(pt.band_low), repr(pt.band_high)])


def write_maxima_csv(maxima: dict, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "max"])
        for year in sorted(maxima):
            val = maxima[year]
            writer.writerow([year, "" if val is None else repr(val)])


def write_error_map(emap: ErrorMap, stem: str):
    """Raw float64 grid + JSON header, the standard grid-dump format."""
    with open(stem + ".bin", "wb") as fh:
        fh.write(np.ascontiguousarray(emap.mean_error, dtype="<f8").tobytes())
    with open(stem + ".json", "w") as fh:
        json.dump({"shape": list(emap.mean_error.shape), "dtype": "<f8",
                   "visits": emap.visits.tolist(),
                   "excluded": emap.excluded.tolist()}, fh, sort_keys=True)
        fh.write("\n")
