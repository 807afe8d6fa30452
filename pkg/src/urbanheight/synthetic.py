"""Seeded desk-scale synthetic city with known truth.

Everything downstream of the generator sees only files in the pipeline's
input formats, so a synthetic run exercises the same code paths as real
data would.
"""

from __future__ import annotations

import datetime as dt
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .asciigrid import write_ascii_grid
from .features.scenes import OPTICAL_L, OPTICAL_S, RADAR, Scene, write_scene_manifest
from .projection import DEFAULT_RADIUS, GeoPoint, forward_array, inverse_array
from .raster import GridSpec, Raster
from .sampler import Footprint, write_footprints_csv
from .subregion import SubregionPartition, write_partition
from .validation import BuildingPolygon, write_reference_csv


@dataclass
class SynthParams:
    n_rows: int = 96
    n_cols: int = 96
    cell_size: float = 150.0
    center_lon: float = 10.0
    center_lat: float = 45.0
    n_blocks: int = 60
    height_min: float = 5.0
    height_max: float = 60.0
    footprint_density: float = 2.5
    noise_sigma: float = 2.0
    quality_fail: float = 0.05
    sensitivity_fail: float = 0.05
    degrade_fail: float = 0.05
    n_parks: int = 4
    river: bool = True
    n_scenes: int = 6
    band_noise: float = 0.01
    radar_noise: float = 0.5
    n_zones: int = 4
    reference_window: int = 32
    sphere_radius: float = DEFAULT_RADIUS


@dataclass
class SyntheticTruth:
    height: Raster
    params: SynthParams
    seed: int


@dataclass
class SyntheticScene:
    spec: GridSpec
    footprints: list
    scenes: list
    dem: Raster
    settlement: Raster
    urban_mask: Raster
    partition: SubregionPartition
    vegetated: np.ndarray
    truth: SyntheticTruth
    reference: list = field(default_factory=list)
    other_product: Raster | None = None


def _grid(p: SynthParams) -> GridSpec:
    cx, cy = forward_array(np.array([p.center_lon]), np.array([p.center_lat]), p.sphere_radius)
    # snap the upper-left corner to whole cells so headers stay short
    ox = np.floor((cx[0] - p.n_cols * p.cell_size / 2) / p.cell_size) * p.cell_size
    oy = np.floor((cy[0] + p.n_rows * p.cell_size / 2) / p.cell_size) * p.cell_size
    return GridSpec(float(ox), float(oy), p.cell_size, p.n_rows, p.n_cols, p.sphere_radius)


def _rect(rng, n_rows, n_cols, lo, hi):
    h = int(rng.integers(lo, hi + 1))
    w = int(rng.integers(lo, hi + 1))
    r0 = int(rng.integers(0, max(1, n_rows - h + 1)))
    c0 = int(rng.integers(0, max(1, n_cols - w + 1)))
    return slice(r0, r0 + h), slice(c0, c0 + w)


def _truth_field(rng, p: SynthParams):
    h = np.full((p.n_rows, p.n_cols), p.height_min + 0.1 * (p.height_max - p.height_min))
    for _ in range(p.n_blocks):
        rs, cs = _rect(rng, p.n_rows, p.n_cols, 3, 14)
        h[rs, cs] = rng.uniform(p.height_min, p.height_max)
    # quarter-meter steps keep per-cell means exact in binary floating point
    return np.round(h * 4.0) / 4.0


def _optical_bands(u, veg, rng, noise, season):
    shape = u.shape

    def n():
        return rng.normal(0.0, noise, shape)

    bands = {
        "blue": 0.05 + 0.05 * u,
        "green": 0.08 + 0.06 * u,
        "red": 0.12 + 0.08 * u,
        "nir": 0.25 - 0.08 * u,
        "swir1": 0.20 + 0.12 * u,
    }
    bands["nir"] = np.where(veg, 0.55, bands["nir"])
    bands["red"] = np.where(veg, 0.05, bands["red"])
    return {k: np.clip(v * season + n(), 0.001, 1.0) for k, v in bands.items()}


def _cloud_mask(rng, shape, fraction):
    """Valid-pixel mask with rectangular cloud patches covering about ``fraction``."""
    mask = np.ones(shape, dtype=bool)
    target = fraction * mask.size
    while (~mask).sum() < target:
        rs, cs = _rect(rng, shape[0], shape[1], 4, max(5, shape[0] // 3))
        mask[rs, cs] = False
    return mask


def generate_synthetic_scene(seed: int, params: SynthParams | None = None) -> SyntheticScene:
    p = params or SynthParams()
    rng = np.random.default_rng(seed)
    spec = _grid(p)
    shape = spec.shape

    heights = _truth_field(rng, p)
    settled = np.ones(shape, dtype=bool)
    if p.river:
        col = int(rng.integers(p.n_cols // 4, 3 * p.n_cols // 4))
        rows = np.arange(p.n_rows)
        cols = np.clip(col + np.round(3 * np.sin(rows / 9.0)).astype(int), 0, p.n_cols - 2)
        settled[rows, cols] = False
        settled[rows, cols + 1] = False
    veg = np.zeros(shape, dtype=bool)
    for _ in range(p.n_parks):
        rs, cs = _rect(rng, p.n_rows, p.n_cols, 3, 6)
        veg[rs, cs] = True
    veg &= settled

    truth = np.where(settled, heights, np.nan)
    truth_r = Raster.from_masked(spec, truth)
    settlement = Raster.from_masked(spec, np.where(settled, 1.0, np.nan))
    urban = Raster.full(spec, 1.0)

    # footprints
    counts = rng.poisson(p.footprint_density, size=shape)
    rr, cc = np.nonzero(counts)
    reps = counts[rr, cc]
    rows = np.repeat(rr, reps)
    cols = np.repeat(cc, reps)
    n = rows.size
    fx = spec.origin_x + (cols + rng.uniform(0.05, 0.95, n)) * spec.cell_size
    fy = spec.origin_y - (rows + rng.uniform(0.05, 0.95, n)) * spec.cell_size
    lon, lat = inverse_array(fx, fy, spec.sphere_radius)
    base = np.where(settled[rows, cols], heights[rows, cols], 0.0)
    v = veg[rows, cols]
    err = rng.normal(0.0, 1.0, n) * p.noise_sigma
    spread = np.abs(rng.normal(0.0, 1.0, n))
    rh95 = np.where(v, base + err + 5.0 + spread, base + err)
    rh85 = np.where(v, base + err, base + err - 0.5 * spread)
    quality = (rng.random(n) >= p.quality_fail).astype(int)
    sens_bad = rng.random(n) < p.sensitivity_fail
    sensitivity = np.where(sens_bad, rng.uniform(0.5, 0.9, n), rng.uniform(0.9, 1.0, n))
    degrade = np.where(rng.random(n) < p.degrade_fail, rng.integers(1, 4, n), 0)
    days = rng.integers(0, 3 * 365, n)
    start = dt.date(2019, 1, 1)
    footprints = [
        Footprint(GeoPoint(float(lon[k]), float(lat[k])), float(rh85[k]), float(rh95[k]),
                  int(quality[k]), int(degrade[k]), float(sensitivity[k]),
                  start + dt.timedelta(days=int(days[k])))
        for k in range(n)
    ]

    # scenes
    u = (np.where(settled, heights, p.height_min) - p.height_min) / (p.height_max - p.height_min)
    water = ~settled
    scenes = []
    for sensor in (OPTICAL_L, OPTICAL_S, RADAR):
        for k in range(p.n_scenes):
            day = dt.date(2020, 1, 1) + dt.timedelta(days=int(k * 365 / p.n_scenes))
            season = 1.0 + 0.05 * np.sin(2 * np.pi * k / p.n_scenes)
            sid = f"{sensor}_{k:03d}"
            if sensor == RADAR:
                bands = {
                    "vv": -12.0 + 10.0 * u - 8.0 * water + rng.normal(0, p.radar_noise, shape),
                    "vh": -18.0 + 8.0 * u - 6.0 * water + rng.normal(0, p.radar_noise, shape),
                }
                scenes.append(Scene(RADAR, {b: Raster(spec, a) for b, a in bands.items()}, day,
                                    scene_id=sid))
                continue
            cloud = float(np.round(rng.uniform(0.0, 0.35), 4))
            valid = _cloud_mask(rng, shape, cloud)
            bands = _optical_bands(u, veg, rng, p.band_noise, season)
            bands["nir"] = np.where(water, 0.02, bands["nir"])
            bands["swir1"] = np.where(water, 0.01, bands["swir1"])
            bands["green"] = np.where(water, 0.08, bands["green"])
            for b in bands:
                bands[b] = np.where(valid, bands[b], 0.6)  # bright cloud tops
            mask = Raster.from_masked(spec, np.where(valid, 1.0, np.nan))
            scenes.append(Scene(sensor, {b: Raster(spec, a) for b, a in bands.items()}, day,
                                cloud_fraction=cloud, pixel_mask=mask, scene_id=sid))

    x, _ = spec.cell_centers()
    dem = Raster(spec, 50.0 + 0.02 * (x - spec.origin_x))

    # quadrant zones
    zone = np.zeros(shape)
    half_r, half_c = p.n_rows // 2, p.n_cols // 2
    nz = max(1, min(4, p.n_zones))
    rows_i, cols_i = np.indices(shape)
    if nz == 1:
        zone[:] = 1
    elif nz == 2:
        zone = np.where(cols_i < half_c, 1, 2)
    else:
        zone = 1 + (rows_i >= half_r) * 2 + (cols_i >= half_c)
        if nz == 3:
            zone = np.where(zone == 4, 3, zone)
    zones = Raster(spec, zone.astype(float))
    labels = {int(z): (f"admin{int(z)}", "Cfb") for z in np.unique(zone)}
    partition = SubregionPartition(zones, labels, set())

    # one reference building per settled cell inside a central window
    reference = []
    w = min(p.reference_window, p.n_rows, p.n_cols)
    r0, c0 = (p.n_rows - w) // 2, (p.n_cols - w) // 2
    for r in range(r0, r0 + w):
        for c in range(c0, c0 + w):
            if not settled[r, c]:
                continue
            bw, bh = rng.uniform(0.3, 0.9, 2) * spec.cell_size
            x0 = spec.origin_x + c * spec.cell_size + rng.uniform(0, spec.cell_size - bw)
            y1 = spec.origin_y - r * spec.cell_size - rng.uniform(0, spec.cell_size - bh)
            reference.append(BuildingPolygon.rectangle(x0, y1 - bh, x0 + bw, y1, heights[r, c]))

    other = Raster.from_masked(spec, np.where(settled, 0.9 * heights + 1.0 + rng.normal(0, 2.0, shape), np.nan))

    return SyntheticScene(spec, footprints, scenes, dem, settlement, urban, partition, veg,
                          SyntheticTruth(truth_r, p, seed), reference, other)


def write_synthetic_scene(scene: SyntheticScene, out_dir, seed: int | None = None,
                          forest: dict | None = None, holdout_fraction: float = 0.2) -> str:
    """Write inputs plus a ready-to-run config; returns the config path."""
    os.makedirs(out_dir, exist_ok=True)
    write_footprints_csv(scene.footprints, os.path.join(out_dir, "footprints.csv"))
    write_scene_manifest(scene.scenes, os.path.join(out_dir, "scenes"))
    write_ascii_grid(scene.dem, os.path.join(out_dir, "dem.asc"))
    write_ascii_grid(scene.settlement, os.path.join(out_dir, "settlement.asc"))
    write_ascii_grid(scene.urban_mask, os.path.join(out_dir, "urban_mask.asc"))
    write_ascii_grid(scene.truth.height, os.path.join(out_dir, "truth.asc"))
    write_partition(scene.partition, os.path.join(out_dir, "partition.asc"),
                    os.path.join(out_dir, "partition.csv"))
    write_reference_csv(scene.reference, os.path.join(out_dir, "reference_polygons.csv"))
    paths = {
        "footprints": "footprints.csv",
        "scenes": "scenes/scenes.csv",
        "dem": "dem.asc",
        "settlement": "settlement.asc",
        "urban_mask": "urban_mask.asc",
        "partition": "partition.asc",
        "partition_table": "partition.csv",
        "truth": "truth.asc",
        "reference_polygons": "reference_polygons.csv",
    }
    if scene.other_product is not None:
        write_ascii_grid(scene.other_product, os.path.join(out_dir, "other_product.asc"))
        paths["comparison_product"] = "other_product.asc"
    spec = scene.spec
    config = {
        "paths": paths,
        "output_dir": "run",
        "grid": {"origin_x": spec.origin_x, "origin_y": spec.origin_y, "cell_size": spec.cell_size,
                 "n_rows": spec.n_rows, "n_cols": spec.n_cols, "sphere_radius": spec.sphere_radius},
        "holdout_fraction": holdout_fraction,
        "seed": scene.truth.seed if seed is None else seed,
    }
    if forest:
        config["forest"] = dict(forest)
    with open(os.path.join(out_dir, "synth_params.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": scene.truth.seed, **asdict(scene.truth.params)}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cfg_path = os.path.join(out_dir, "config.json")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return cfg_path
