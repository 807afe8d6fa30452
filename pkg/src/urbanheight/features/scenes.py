"""Scene container, cloud-cover filtering and scene manifests."""

from __future__ import annotations

import csv
import datetime as dt
import os
from dataclasses import dataclass, field

import numpy as np

from ..asciigrid import read_ascii_grid, write_ascii_grid
from ..exceptions import ConfigError, GridMismatchError
from ..raster import GridSpec, Raster

OPTICAL_L = "optical_L"
OPTICAL_S = "optical_S"
RADAR = "radar"
SENSORS = (OPTICAL_L, OPTICAL_S, RADAR)

OPTICAL_BANDS = ("blue", "green", "red", "nir", "swir1")
RADAR_BANDS = ("vv", "vh")

# maximum scene cloud fraction (exclusive) per optical sensor
CLOUD_LIMITS = {OPTICAL_L: 0.30, OPTICAL_S: 0.20}


@dataclass(frozen=True)
class Scene:
    sensor: str
    bands: dict
    acquired: dt.date
    cloud_fraction: float | None = None
    pixel_mask: Raster | None = None
    scene_id: str = field(default="", compare=False)

    def __post_init__(self):
        if self.sensor not in SENSORS:
            raise ValueError(f"unknown sensor {self.sensor!r}")
        needed = RADAR_BANDS if self.sensor == RADAR else OPTICAL_BANDS
        missing = [b for b in needed if b not in self.bands]
        if missing:
            raise ValueError(f"{self.sensor} scene missing band(s) {missing}")
        if self.is_optical:
            if self.cloud_fraction is None or not (0.0 <= self.cloud_fraction <= 1.0):
                raise ValueError("optical scenes need a cloud_fraction in [0, 1]")
        elif self.cloud_fraction is not None:
            raise ValueError("radar scenes carry no cloud_fraction")
        spec = self.spec
        for name, r in self.bands.items():
            if r.spec != spec:
                raise GridMismatchError(f"band {name} is on a different grid")
        if self.pixel_mask is not None and self.pixel_mask.spec != spec:
            raise GridMismatchError("pixel mask is on a different grid")

    @property
    def is_optical(self) -> bool:
        return self.sensor != RADAR

    @property
    def spec(self) -> GridSpec:
        return next(iter(self.bands.values())).spec

    def valid_pixels(self) -> np.ndarray:
        if self.pixel_mask is None:
            return np.ones(self.spec.shape, dtype=bool)
        return self.pixel_mask.valid & (self.pixel_mask.values == 1)

    def band(self, name: str) -> np.ndarray:
        """Band values with masked and nodata pixels set to NaN."""
        data = self.bands[name].masked()
        data[~self.valid_pixels()] = np.nan
        return data


def scene_filter(scenes):
    """Drop optical scenes at or above their sensor's cloud limit; keep radar."""
    kept = []
    for s in scenes:
        limit = CLOUD_LIMITS.get(s.sensor)
        if limit is None or s.cloud_fraction < limit:
            kept.append(s)
    return kept


def scene_filter_with_limits(scenes, limit_L: float, limit_S: float):
    limits = {OPTICAL_L: limit_L, OPTICAL_S: limit_S}
    return [s for s in scenes if s.sensor == RADAR or s.cloud_fraction < limits[s.sensor]]


# ---------------------------------------------------------------------------
# manifest: one row per (scene, band) with band "mask" for the pixel mask
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ("scene_id", "sensor", "acquired", "cloud_fraction", "band", "path")


def write_scene_manifest(scenes, directory, manifest="scenes.csv"):
    os.makedirs(directory, exist_ok=True)
    rows = []
    for s in scenes:
        sid = s.scene_id
        entries = list(s.bands.items())
        if s.pixel_mask is not None:
            entries.append(("mask", s.pixel_mask))
        for band, r in entries:
            fname = f"{sid}_{band}.asc"
            write_ascii_grid(r, os.path.join(directory, fname))
            cf = "" if s.cloud_fraction is None else repr(float(s.cloud_fraction))
            rows.append((sid, s.sensor, s.acquired.isoformat(), cf, band, fname))
    path = os.path.join(directory, manifest)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        w.writerows(rows)
    return path


def read_scene_manifest(path, sphere_radius=None):
    base = os.path.dirname(os.path.abspath(path))
    grouped: dict[str, dict] = {}
    order = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing column(s) {sorted(missing)}")
        for rec in reader:
            sid = rec["scene_id"]
            if sid not in grouped:
                order.append(sid)
                cf = rec["cloud_fraction"].strip()
                grouped[sid] = dict(sensor=rec["sensor"], acquired=dt.date.fromisoformat(rec["acquired"]),
                                    cloud_fraction=float(cf) if cf else None, bands={}, mask=None)
            kwargs = {} if sphere_radius is None else {"sphere_radius": sphere_radius}
            raster = read_ascii_grid(os.path.join(base, rec["path"]), **kwargs)
            if rec["band"] == "mask":
                grouped[sid]["mask"] = raster
            else:
                grouped[sid]["bands"][rec["band"]] = raster
    return [Scene(sensor=g["sensor"], bands=g["bands"], acquired=g["acquired"],
                  cloud_fraction=g["cloud_fraction"], pixel_mask=g["mask"], scene_id=sid)
            for sid, g in ((sid, grouped[sid]) for sid in order)]
