"""Footprint filtering, RH compositing and aggregation to gridded height samples."""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import MalformedRecordError
from .projection import GeoPoint, forward_array
from .raster import GridSpec, Raster

FOOTPRINT_FIELDS = ("lon", "lat", "rh85", "rh95", "quality_flag", "degrade_flag", "sensitivity", "date")
SAMPLE_FIELDS = ("row", "col", "mean_height", "count")

MIN_SENSITIVITY = 0.9
MIN_HEIGHT = 2.5
MIN_COUNT = 3
VEG_THRESHOLD = 0.5


@dataclass(frozen=True)
class Footprint:
    point: GeoPoint
    rh85: float | None
    rh95: float | None
    quality_flag: int
    degrade_flag: int
    sensitivity: float
    acquired: dt.date

    def __post_init__(self):
        if self.quality_flag not in (0, 1):
            raise ValueError(f"quality_flag must be 0 or 1, got {self.quality_flag}")
        if self.degrade_flag < 0:
            raise ValueError(f"degrade_flag must be non-negative, got {self.degrade_flag}")
        if not (0.0 <= self.sensitivity <= 1.0):
            raise ValueError(f"sensitivity must lie in [0, 1], got {self.sensitivity}")
        if self.rh85 is not None and self.rh95 is not None and self.rh85 > self.rh95:
            raise ValueError(f"rh85 ({self.rh85}) exceeds rh95 ({self.rh95})")


@dataclass(frozen=True, order=True)
class HeightSample:
    row: int
    col: int
    mean_height: float
    count: int

    @property
    def cell(self) -> tuple[int, int]:
        return (self.row, self.col)


# ---------------------------------------------------------------------------
# per-record rules
# ---------------------------------------------------------------------------


def filter_footprints(fps: Iterable[Footprint], min_sensitivity: float = MIN_SENSITIVITY,
                      tally: Counter | None = None) -> list[Footprint]:
    """Keep good-quality, full-sensitivity, non-degraded shots in input order.

    A dropped shot is tallied under the first rule it fails, checked in the
    order quality, sensitivity, degrade.
    """
    kept = []
    for fp in fps:
        if fp.quality_flag != 1:
            reason = "quality"
        elif fp.sensitivity < min_sensitivity:
            reason = "sensitivity"
        elif fp.degrade_flag != 0:
            reason = "degrade"
        else:
            kept.append(fp)
            continue
        if tally is not None:
            tally[reason] += 1
    return kept


def project_footprints(fps: Sequence[Footprint], radius: float):
    lon = np.array([fp.point.lon for fp in fps], dtype=np.float64)
    lat = np.array([fp.point.lat for fp in fps], dtype=np.float64)
    return forward_array(lon, lat, radius)


def locate_footprints(fps: Sequence[Footprint], spec: GridSpec):
    """Grid cells of footprints: ``(rows, cols, inside)`` arrays."""
    if not fps:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty(0, dtype=bool)
    x, y = project_footprints(fps, spec.sphere_radius)
    return spec.cells_of_points(x, y)


def mask_to_settlement(fps: Sequence[Footprint], settlement: Raster,
                       tally: Counter | None = None) -> list[Footprint]:
    """Keep footprints landing on a settlement cell (value 1)."""
    rows, cols, inside = locate_footprints(fps, settlement.spec)
    kept = []
    for k, fp in enumerate(fps):
        if not inside[k]:
            if tally is not None:
                tally["outside_grid"] += 1
            continue
        if settlement.value_at(rows[k], cols[k]) == 1.0:
            kept.append(fp)
        elif tally is not None:
            tally["outside_settlement"] += 1
    return kept


def rh_composite(fp: Footprint, high_vegetation: bool, min_height: float = MIN_HEIGHT):
    """Building height for one shot, or ``None`` when it is too low."""
    if high_vegetation:
        h, name = fp.rh85, "rh85"
    else:
        h, name = fp.rh95, "rh95"
    if h is None or not math.isfinite(h):
        raise MalformedRecordError(f"footprint at {fp.point} lacks {name}")
    return h if h > min_height else None


def vegetation_flag(cell, ndvi_p90: Raster | None, threshold: float = VEG_THRESHOLD,
                    diagnostics: Counter | None = None) -> bool:
    if ndvi_p90 is None:
        return False
    v = ndvi_p90.value_at(*cell)
    if v is None:
        if diagnostics is not None:
            diagnostics["veg_nodata"] += 1
        return False
    return v >= threshold


def aggregate_samples(heights: Iterable[tuple[tuple[int, int], float]], spec: GridSpec | None = None,
                      min_count: int = MIN_COUNT, tally: Counter | None = None) -> list[HeightSample]:
    """Per-cell means of composited heights, for cells with at least ``min_count``.

    Values are summed in sorted order so the result does not depend on the
    order of the input list.
    """
    by_cell: dict[tuple[int, int], list[float]] = {}
    for cell, h in heights:
        if spec is not None and not (0 <= cell[0] < spec.n_rows and 0 <= cell[1] < spec.n_cols):
            raise ValueError(f"cell {cell} outside grid")
        by_cell.setdefault((int(cell[0]), int(cell[1])), []).append(float(h))
    out = []
    for cell in sorted(by_cell):
        hs = by_cell[cell]
        if len(hs) < min_count:
            if tally is not None:
                tally["count"] += len(hs)
                tally["cells_below_count"] += 1
            continue
        hs.sort()
        total = 0.0
        for h in hs:
            total += h
        out.append(HeightSample(cell[0], cell[1], total / len(hs), len(hs)))
    return out


# ---------------------------------------------------------------------------
# estimator front-end
# ---------------------------------------------------------------------------


DROP_RULES = ("quality", "sensitivity", "degrade", "outside_grid", "outside_settlement",
              "min_height", "count", "cells_below_count")


class HeightSampler(BaseEstimator):
    """Turn raw footprints into 150-m cell height samples.

    Stateless: ``fit`` only validates parameters. After ``transform`` the
    per-rule drop counts are in ``tally_``.

    Parameters
    ----------
    min_sensitivity : float
        Shots below this beam sensitivity are dropped (the boundary is kept).
    min_height : float
        Composited heights must be strictly greater than this.
    min_count : int
        Minimum footprints per cell for a sample.
    veg_threshold : float
        NDVI p90 at or above which a cell is treated as densely vegetated and
        RH85 replaces RH95.
    """

    def __init__(self, min_sensitivity=MIN_SENSITIVITY, min_height=MIN_HEIGHT,
                 min_count=MIN_COUNT, veg_threshold=VEG_THRESHOLD):
        self.min_sensitivity = min_sensitivity
        self.min_height = min_height
        self.min_count = min_count
        self.veg_threshold = veg_threshold

    def fit(self, footprints=None, y=None):
        if not (0.0 <= self.min_sensitivity <= 1.0):
            raise ValueError("min_sensitivity must lie in [0, 1]")
        if int(self.min_count) < 1:
            raise ValueError("min_count must be >= 1")
        return self

    def transform(self, footprints: Sequence[Footprint], settlement: Raster,
                  ndvi_p90: Raster | None = None) -> list[HeightSample]:
        self.fit()
        # every drop rule appears in the tally, zero or not
        tally: Counter = Counter(dict.fromkeys(DROP_RULES, 0))
        tally["input"] = len(footprints)
        fps = filter_footprints(footprints, self.min_sensitivity, tally)
        fps = mask_to_settlement(fps, settlement, tally)
        if ndvi_p90 is not None:
            settlement.spec.check_compatible(ndvi_p90.spec, "settlement and NDVI p90")
        rows, cols, _ = locate_footprints(fps, settlement.spec)
        veg_cache: dict[tuple[int, int], bool] = {}
        heights = []
        for k, fp in enumerate(fps):
            cell = (int(rows[k]), int(cols[k]))
            if cell not in veg_cache:
                veg_cache[cell] = vegetation_flag(cell, ndvi_p90, self.veg_threshold, tally)
            h = rh_composite(fp, veg_cache[cell], self.min_height)
            if h is None:
                tally["min_height"] += 1
                continue
            heights.append((cell, h))
        tally["vegetated_cells"] = sum(veg_cache.values())
        samples = aggregate_samples(heights, settlement.spec, int(self.min_count), tally)
        tally["samples"] = len(samples)
        self.tally_ = tally
        return samples

    def fit_transform(self, footprints, settlement, ndvi_p90=None):
        return self.fit().transform(footprints, settlement, ndvi_p90)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _opt_float(tok: str):
    tok = tok.strip()
    if tok == "" or tok.lower() in ("na", "nan", "none"):
        return None
    return float(tok)


def read_footprints_csv(path) -> list[Footprint]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(FOOTPRINT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise MalformedRecordError(f"{path}: missing column(s) {sorted(missing)}")
        for lineno, rec in enumerate(reader, start=2):
            try:
                out.append(Footprint(
                    point=GeoPoint(float(rec["lon"]), float(rec["lat"])),
                    rh85=_opt_float(rec["rh85"]),
                    rh95=_opt_float(rec["rh95"]),
                    quality_flag=int(rec["quality_flag"]),
                    degrade_flag=int(rec["degrade_flag"]),
                    sensitivity=float(rec["sensitivity"]),
                    acquired=dt.date.fromisoformat(rec["date"].strip()),
                ))
            except (ValueError, TypeError) as exc:
                raise MalformedRecordError(f"{path}:{lineno}: {exc}") from None
    return out


def _fmt(v):
    return "" if v is None else repr(float(v))


def write_footprints_csv(fps: Iterable[Footprint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FOOTPRINT_FIELDS)
        for fp in fps:
            w.writerow([repr(fp.point.lon), repr(fp.point.lat), _fmt(fp.rh85), _fmt(fp.rh95),
                        fp.quality_flag, fp.degrade_flag, repr(float(fp.sensitivity)),
                        fp.acquired.isoformat()])


def write_samples_csv(samples: Iterable[HeightSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_FIELDS)
        for s in samples:
            w.writerow([s.row, s.col, repr(float(s.mean_height)), s.count])


def read_samples_csv(path) -> list[HeightSample]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [HeightSample(int(r["row"]), int(r["col"]), float(r["mean_height"]), int(r["count"]))
                for r in reader]
