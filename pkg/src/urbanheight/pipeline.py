"""Config-driven orchestration of the sample, features, train, map, validate and compare stages.

Config file (JSON, unknown keys rejected at every level)::

    {
      "paths": {
        "footprints": "footprints.csv",          # required
        "scenes": "scenes/scenes.csv",           # required, scene manifest
        "dem": "dem.asc",                        # required
        "settlement": "settlement.asc",          # required, 1/nodata
        "urban_mask": "urban_mask.asc",          # required, 1/nodata
        "partition": "partition.asc",            # required, zone ids
        "partition_table": "partition.csv",      # required
        "truth": "truth.asc",                    # optional
        "reference_polygons": "ref.csv",         # optional
        "comparison_product": "other.asc"        # optional
      },
      "output_dir": "run",
      "grid": {"origin_x": .., "origin_y": .., "cell_size": 150, "n_rows": .., "n_cols": ..,
               "sphere_radius": 6378137},       # optional; inputs must match it
      "sampling": {"min_sensitivity": 0.9, "min_height": 2.5, "min_count": 3, "veg_ndvi": 0.5},
      "scenes": {"cloud_L": 0.30, "cloud_S": 0.20},
      "texture": {"levels": 32, "window_L": 2, "window_S": 6, "window_R": 5},
      "forest": {"n_trees": 500, "mtry": null, "min_node": 5, "bootstrap": true, "n_jobs": 1},
      "subregions": {"northern_lat": 51.6, "radius_m": 600000, "min_zone_samples": 10},
      "holdout_fraction": 0.0,
      "seed": 0
    }

Relative paths resolve against the config file's directory; ``output_dir``
too. Stage outputs inside the output directory:

    samples.csv, samples_train.csv, samples_holdout.csv
    features/manifest.txt + one .asc per band
    models/zone_<id>.model
    height_map.asc
    validation.csv
    comparison.csv, difference.asc
    run.log
"""

from __future__ import annotations

import copy
import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .asciigrid import read_ascii_grid, write_ascii_grid
from .exceptions import ConfigError, MissingModelError, StageError, UrbanHeightError
from .features.indices import index_array
from .features.scenes import OPTICAL_L, OPTICAL_S, RADAR, read_scene_manifest, scene_filter_with_limits
from .features.stack import FeatureStack, FeatureStackBuilder
from .features.temporal import temporal_stats_cube
from .projection import DEFAULT_RADIUS
from .raster import GridSpec, Raster
from .sampler import (HeightSampler, read_footprints_csv, read_samples_csv, write_samples_csv)
from .subregion import (SubregionHeightModel, assign_subregion, load_models, map_heights,
                        northern_training_sets, read_partition, save_models, training_rows)
from .validation import (ValidationReport, area_weighted_reference, compare_products,
                         read_reference_csv, write_reports_csv)

logger = logging.getLogger(__name__)

REQUIRED_PATHS = ("footprints", "scenes", "dem", "settlement", "urban_mask", "partition", "partition_table")
OPTIONAL_PATHS = ("truth", "reference_polygons", "comparison_product")

DEFAULTS = {
    "sampling": {"min_sensitivity": 0.9, "min_height": 2.5, "min_count": 3, "veg_ndvi": 0.5},
    "scenes": {"cloud_L": 0.30, "cloud_S": 0.20},
    "texture": {"levels": 32, "window_L": 2, "window_S": 6, "window_R": 5},
    "forest": {"n_trees": 500, "mtry": None, "min_node": 5, "bootstrap": True, "n_jobs": 1},
    "subregions": {"northern_lat": 51.6, "radius_m": 600000.0, "min_zone_samples": 10},
}
GRID_KEYS = ("origin_x", "origin_y", "cell_size", "n_rows", "n_cols", "sphere_radius")
TOP_KEYS = {"paths", "output_dir", "grid", "holdout_fraction", "seed", *DEFAULTS}

STAGES = ("sample", "features", "train", "map", "validate", "compare")
PARTIAL_MARKER = ".partial"


@dataclass
class PipelineConfig:
    paths: dict
    output_dir: str
    sampling: dict
    scenes: dict
    texture: dict
    forest: dict
    subregions: dict
    seed: int = 0
    holdout_fraction: float = 0.0
    grid: GridSpec | None = None
    base_dir: str = "."

    def path(self, key):
        p = self.paths.get(key)
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    @property
    def out(self) -> str:
        o = self.output_dir
        return o if os.path.isabs(o) else os.path.join(self.base_dir, o)

    @property
    def sphere_radius(self) -> float:
        return self.grid.sphere_radius if self.grid is not None else DEFAULT_RADIUS


def _check_keys(section: dict, allowed, where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_config(raw: dict, base_dir: str = ".") -> PipelineConfig:
    """Validate a config mapping; every error is a ConfigError raised before any work."""
    _check_keys(raw, TOP_KEYS, "config")
    paths = raw.get("paths")
    if paths is None:
        raise ConfigError("config needs a 'paths' section")
    _check_keys(paths, REQUIRED_PATHS + OPTIONAL_PATHS, "paths")
    missing = [k for k in REQUIRED_PATHS if k not in paths]
    if missing:
        raise ConfigError(f"missing path(s): {', '.join(missing)}")
    sections = {}
    for name, defaults in DEFAULTS.items():
        given = raw.get(name, {})
        _check_keys(given, defaults, name)
        sections[name] = {**defaults, **given}
    grid = None
    if raw.get("grid") is not None:
        g = raw["grid"]
        _check_keys(g, GRID_KEYS, "grid")
        try:
            grid = GridSpec(**g)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad grid: {exc}") from None
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    hf = raw.get("holdout_fraction", 0.0)
    if not isinstance(hf, (int, float)) or not (0.0 <= hf < 1.0):
        raise ConfigError("holdout_fraction must lie in [0, 1)")
    s = sections["sampling"]
    if not (0.0 <= s["min_sensitivity"] <= 1.0) or int(s["min_count"]) < 1:
        raise ConfigError("bad sampling thresholds")
    t = sections["texture"]
    if int(t["levels"]) < 2 or min(t["window_L"], t["window_S"], t["window_R"]) < 1:
        raise ConfigError("texture levels must be >= 2 and windows >= 1")
    f = sections["forest"]
    if int(f["n_trees"]) < 1 or int(f["min_node"]) < 1:
        raise ConfigError("forest n_trees and min_node must be >= 1")
    return PipelineConfig(
        paths=dict(paths), output_dir=str(raw.get("output_dir", "run")), seed=seed,
        holdout_fraction=float(hf), grid=grid, base_dir=base_dir, **sections)


def load_config(path, seed: int | None = None, out: str | None = None) -> PipelineConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    cfg = parse_config(raw, os.path.dirname(os.path.abspath(path)))
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.output_dir = os.path.abspath(out)
    return cfg


# ---------------------------------------------------------------------------
# run context
# ---------------------------------------------------------------------------


@dataclass
class RunLog:
    """Per-stage counters and notes, written in a fixed order.

    Notes sort by stage order so a run split across several invocations
    writes the same file as one full run.
    """

    counters: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def add(self, stage: str, tally):
        for k, v in sorted(dict(tally).items()):
            self.counters[f"{stage}.{k}"] = v

    def note(self, stage: str, msg: str):
        self.notes.append((stage, msg))
        logger.info("%s: %s", stage, msg)

    def clear_stage(self, stage: str):
        self.counters = {k: v for k, v in self.counters.items() if not k.startswith(stage + ".")}
        self.notes = [n for n in self.notes if n[0] != stage]

    def write(self, path):
        order = {name: i for i, name in enumerate(STAGES)}
        notes = sorted(self.notes, key=lambda n: order.get(n[0], -1))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for k in sorted(self.counters):
                fh.write(f"{k} {self.counters[k]}\n")
            for stage, msg in notes:
                fh.write(f"# {stage}: {msg}\n")

    @classmethod
    def read(cls, path) -> "RunLog":
        log = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# "):
                    stage, _, msg = line[2:].partition(": ")
                    log.notes.append((stage, msg))
                elif line:
                    k, _, v = line.partition(" ")
                    log.counters[k] = int(v) if v.lstrip("-").isdigit() else v
        return log


class Pipeline:
    """Holds a config and the intermediate products of a run.

    Each stage reads its inputs from memory when an earlier stage ran in the
    same process, otherwise from the output directory.
    """

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        log_path = os.path.join(cfg.out, "run.log")
        # single-stage invocations extend the log of earlier ones
        self.log = RunLog.read(log_path) if os.path.exists(log_path) else RunLog()
        self._scenes = None
        self._stack = None
        self._samples = None
        self._split = None
        self._models = None
        self._map = None
        os.makedirs(cfg.out, exist_ok=True)

    # -- helpers --------------------------------------------------------

    def _out(self, *parts):
        return os.path.join(self.cfg.out, *parts)

    def _read_raster(self, key, stage):
        path = self.cfg.path(key)
        try:
            r = read_ascii_grid(path, self.cfg.sphere_radius)
        except OSError as exc:
            raise StageError(stage, f"cannot read {key} ({path}): {exc}") from None
        except UrbanHeightError as exc:
            raise StageError(stage, f"bad {key} raster: {exc}") from None
        if self.cfg.grid is not None and r.spec != self.cfg.grid:
            raise StageError(stage, f"{key} raster is not on the configured grid")
        return r

    def scenes(self, stage):
        if self._scenes is None:
            try:
                scenes = read_scene_manifest(self.cfg.path("scenes"), self.cfg.sphere_radius)
            except (OSError, UrbanHeightError, ValueError) as exc:
                raise StageError(stage, f"cannot load scenes: {exc}") from None
            sc = self.cfg.scenes
            kept = scene_filter_with_limits(scenes, sc["cloud_L"], sc["cloud_S"])
            tally = Counter()
            for s in scenes:
                tally[f"{s.sensor}_in"] += 1
            for s in kept:
                tally[f"{s.sensor}_kept"] += 1
            self.log.add("scenes", tally)
            self._scenes = kept
        return self._scenes

    def _partition(self, stage):
        try:
            part = read_partition(self.cfg.path("partition"), self.cfg.path("partition_table"),
                                  self.cfg.sphere_radius)
        except (OSError, UrbanHeightError, ValueError, KeyError) as exc:
            raise StageError(stage, f"cannot load partition: {exc}") from None
        return part

    # -- stages ---------------------------------------------------------

    def ndvi_p90(self, spec: GridSpec) -> Raster:
        """NDVI 90th percentile over all kept optical scenes (vegetation test)."""
        optical = [s for s in self.scenes("sample") if s.is_optical]
        if not optical:
            return Raster.from_masked(spec, np.full(spec.shape, np.nan))
        cube = np.stack([index_array(s, "ndvi") for s in optical])
        return Raster.from_masked(spec, temporal_stats_cube(cube, ("p90",))["p90"])

    def sample(self):
        stage = "sample"
        settlement = self._read_raster("settlement", stage)
        try:
            fps = read_footprints_csv(self.cfg.path("footprints"))
        except (OSError, UrbanHeightError) as exc:
            raise StageError(stage, f"cannot load footprints: {exc}") from None
        s = self.cfg.sampling
        sampler = HeightSampler(min_sensitivity=s["min_sensitivity"], min_height=s["min_height"],
                                min_count=int(s["min_count"]), veg_threshold=s["veg_ndvi"])
        try:
            samples = sampler.transform(fps, settlement, self.ndvi_p90(settlement.spec))
        except UrbanHeightError as exc:
            raise StageError(stage, str(exc)) from None
        self.log.add(stage, sampler.tally_)
        if not samples:
            raise StageError(stage, "no samples survived filtering")
        write_samples_csv(samples, self._out("samples.csv"))
        self._samples = samples
        return samples

    def features(self):
        stage = "features"
        dem = self._read_raster("dem", stage)
        scenes = self.scenes(stage)
        t = self.cfg.texture
        builder = FeatureStackBuilder(levels=int(t["levels"]), window_L=int(t["window_L"]),
                                      window_S=int(t["window_S"]), window_R=int(t["window_R"]))
        try:
            stack = builder.transform([s for s in scenes if s.sensor == OPTICAL_L],
                                      [s for s in scenes if s.sensor == OPTICAL_S],
                                      [s for s in scenes if s.sensor == RADAR], dem)
        except (UrbanHeightError, ValueError) as exc:
            raise StageError(stage, str(exc)) from None
        stack.write(self._out("features"))
        self.log.add(stage, {"bands": len(stack), "cells": stack.spec.n_rows * stack.spec.n_cols})
        self._stack = stack
        return stack

    def _load_samples(self, stage):
        if self._samples is None:
            path = self._out("samples.csv")
            if not os.path.exists(path):
                raise StageError(stage, "samples.csv missing; run the sample stage first")
            self._samples = read_samples_csv(path)
        return self._samples

    def _load_stack(self, stage):
        if self._stack is None:
            d = self._out("features")
            if not os.path.exists(os.path.join(d, "manifest.txt")):
                raise StageError(stage, "feature stack missing; run the features stage first")
            self._stack = FeatureStack.read(d, self.cfg.sphere_radius)
        return self._stack

    def split_samples(self, samples):
        """Deterministic hold-out split of sample cells."""
        hf = self.cfg.holdout_fraction
        n = len(samples)
        n_hold = int(round(hf * n))
        rng = np.random.default_rng([self.cfg.seed, 7])
        hold = np.zeros(n, dtype=bool)
        if n_hold:
            hold[rng.permutation(n)[:n_hold]] = True
        train = [s for s, h in zip(samples, hold) if not h]
        holdout = [s for s, h in zip(samples, hold) if h]
        return train, holdout

    def train(self):
        stage = "train"
        samples = self._load_samples(stage)
        stack = self._load_stack(stage)
        part = self._partition(stage)
        if part.spec != stack.spec:
            raise StageError(stage, "partition grid differs from the feature grid")
        train, holdout = self.split_samples(samples)
        write_samples_csv(train, self._out("samples_train.csv"))
        write_samples_csv(holdout, self._out("samples_holdout.csv"))
        self._split = (train, holdout)
        tally = Counter(train=len(train), holdout=len(holdout), zone_nodata=0, nodata_feature_rows=0)

        zone_sets = assign_subregion(train, part, stack.spec, tally)
        sr = self.cfg.subregions
        # flagged zones, or failing that every zone wholly north of the limit
        north = northern_training_sets(train, part, sr["northern_lat"], sr["radius_m"],
                                       int(sr["min_zone_samples"]))
        for zid, chosen in north.sets.items():
            zone_sets[zid] = chosen
            tally[f"northern_zone_{zid}_samples"] = len(chosen)
        Xs, ys, zs = [], [], []
        for zid in sorted(zone_sets):
            X, y, keep = training_rows(zone_sets[zid], stack)
            tally["nodata_feature_rows"] += int((~keep).sum())
            Xs.append(X[keep])
            ys.append(y[keep])
            zs.append(np.full(int(keep.sum()), zid, dtype=np.int64))
        if not Xs:
            raise StageError(stage, "no training samples fall inside any zone")
        f = self.cfg.forest
        model = SubregionHeightModel(n_trees=int(f["n_trees"]), mtry=f["mtry"], min_node=int(f["min_node"]),
                                     bootstrap=bool(f["bootstrap"]), random_state=self.cfg.seed,
                                     n_jobs=int(f["n_jobs"]), min_zone_samples=int(sr["min_zone_samples"]))
        try:
            model.fit(np.concatenate(Xs), np.concatenate(ys), np.concatenate(zs), feature_names=stack.names)
        except UrbanHeightError as exc:
            raise StageError(stage, str(exc)) from None
        for zid in model.untrainable_:
            self.log.note(stage, f"zone {zid} has too few samples; no model")
        tally["models"] = len(model.models_)
        tally["untrainable_zones"] = len(model.untrainable_)
        self.log.add(stage, tally)
        save_models(model.models_, self._out("models"))
        self._models = model.models_
        return model.models_

    def map(self):
        stage = "map"
        stack = self._load_stack(stage)
        if self._models is None:
            d = self._out("models")
            if not os.path.isdir(d):
                raise StageError(stage, "models missing; run the train stage first")
            self._models = load_models(d)
        mask = self._read_raster("urban_mask", stage)
        part = self._partition(stage)
        tally = Counter(map_feature_nodata=0, map_zone_nodata=0)
        try:
            hmap = map_heights(self._models, stack, mask, part, tally)
        except MissingModelError as exc:
            raise StageError(stage, str(exc)) from None
        except UrbanHeightError as exc:
            raise StageError(stage, str(exc)) from None
        tally["mapped_cells"] = int(hmap.valid.sum())
        self.log.add(stage, tally)
        write_ascii_grid(hmap, self._out("height_map.asc"))
        self._map = hmap
        return hmap

    def _load_map(self, stage):
        if self._map is None:
            path = self._out("height_map.asc")
            if not os.path.exists(path):
                raise StageError(stage, "height_map.asc missing; run the map stage first")
            self._map = read_ascii_grid(path, self.cfg.sphere_radius)
        return self._map

    def validate(self):
        stage = "validate"
        hmap = self._load_map(stage)
        mv = hmap.masked()
        reports = []
        if self._split is None:
            hold_path = self._out("samples_holdout.csv")
            holdout = read_samples_csv(hold_path) if os.path.exists(hold_path) else []
        else:
            holdout = self._split[1]
        if holdout:
            rows = np.array([s.row for s in holdout])
            cols = np.array([s.col for s in holdout])
            ref = np.array([s.mean_height for s in holdout])
            reports.append(ValidationReport.from_pairs("holdout_samples", mv[rows, cols], ref))
        if self.cfg.path("truth"):
            truth = self._read_raster("truth", stage).masked()
            if holdout:
                reports.append(ValidationReport.from_pairs("holdout_truth", mv[rows, cols], truth[rows, cols]))
            reports.append(ValidationReport.from_pairs("truth_all", mv.ravel(), truth.ravel()))
        if self.cfg.path("reference_polygons"):
            tally = Counter()
            try:
                polys = read_reference_csv(self.cfg.path("reference_polygons"))
            except (OSError, ValueError) as exc:
                raise StageError(stage, f"cannot load reference polygons: {exc}") from None
            ref = area_weighted_reference(polys, hmap.spec, tally=tally).masked()
            reports.append(ValidationReport.from_pairs("reference_polygons", mv.ravel(), ref.ravel()))
            self.log.add(stage, tally)
        write_reports_csv(reports, self._out("validation.csv"))
        self.log.add(stage, {f"{r.stratum}_n": r.n for r in reports})
        return reports

    def compare(self):
        stage = "compare"
        if not self.cfg.path("comparison_product"):
            self.log.note(stage, "no comparison_product configured; skipped")
            return []
        hmap = self._load_map(stage)
        other = self._read_raster("comparison_product", stage)
        mask = self._read_raster("urban_mask", stage)
        part = self._partition(stage)
        try:
            reports, diff = compare_products(hmap, other, mask, part.zones)
        except UrbanHeightError as exc:
            raise StageError(stage, str(exc)) from None
        write_reports_csv(reports, self._out("comparison.csv"))
        write_ascii_grid(diff, self._out("difference.asc"))
        return reports

    # -- driver ---------------------------------------------------------

    def run_stage(self, name):
        self.log.clear_stage(name)
        marker = self._out(PARTIAL_MARKER)
        with open(marker, "w", encoding="utf-8") as fh:
            fh.write(name + "\n")
        try:
            result = getattr(self, name)()
        except StageError:
            self.log.write(self._out("run.log"))
            raise
        except UrbanHeightError as exc:
            self.log.write(self._out("run.log"))
            raise StageError(name, str(exc)) from exc
        os.remove(marker)
        self.log.write(self._out("run.log"))
        return result

    def run(self, stages=STAGES):
        if tuple(stages) == STAGES:
            self.log = RunLog()
        results = {}
        for name in stages:
            results[name] = self.run_stage(name)
        return results


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run every stage; returns the validation and comparison reports plus counters."""
    pipe = Pipeline(copy.deepcopy(cfg))
    results = pipe.run()
    return {"validation": results["validate"], "comparison": results["compare"],
            "counters": dict(pipe.log.counters), "output_dir": pipe.cfg.out}
