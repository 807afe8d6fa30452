"""Subregion partition, high-latitude sample borrowing, per-zone models and wall-to-wall mapping."""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .asciigrid import read_ascii_grid, write_ascii_grid
from .exceptions import GridMismatchError, MissingModelError, TrainingError
from .forest import ForestRegressor, load_model, save_model
from .forest.forest import MIN_TRAIN_ROWS
from .projection import inverse_array
from .raster import GridSpec, Raster

NORTHERN_LAT_LIMIT = 51.6
NORTHERN_RADIUS_M = 600_000.0
MIN_ZONE_SAMPLES = MIN_TRAIN_ROWS
PARTITION_FIELDS = ("zone_id", "admin", "climate", "is_northern")


@dataclass
class SubregionPartition:
    zones: Raster
    labels: dict = field(default_factory=dict)
    northern_ids: set = field(default_factory=set)

    @property
    def spec(self) -> GridSpec:
        return self.zones.spec

    def zone_array(self) -> np.ndarray:
        """Integer zone ids with -1 on nodata cells."""
        z = self.zones.values
        return np.where(self.zones.valid, z, -1).astype(np.int64)

    def zone_ids(self) -> list[int]:
        z = self.zone_array()
        return sorted(int(v) for v in np.unique(z[z >= 0]))


def derive_northern_ids(zones: Raster, lat_limit: float = NORTHERN_LAT_LIMIT) -> set:
    """Zones whose every cell center lies north of ``lat_limit`` degrees."""
    spec = zones.spec
    x, y = spec.cell_centers()
    _, lat = inverse_array(x, y, spec.sphere_radius)
    z = np.where(zones.valid, zones.values, -1).astype(np.int64)
    out = set()
    for zid in np.unique(z[z >= 0]):
        if lat[z == zid].min() > lat_limit:
            out.add(int(zid))
    return out


def read_partition(grid_path, table_path, sphere_radius=None) -> SubregionPartition:
    kwargs = {} if sphere_radius is None else {"sphere_radius": sphere_radius}
    zones = read_ascii_grid(grid_path, **kwargs)
    labels, northern = {}, set()
    with open(table_path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            zid = int(rec["zone_id"])
            labels[zid] = (rec["admin"], rec["climate"])
            if rec["is_northern"].strip().lower() in ("1", "true", "yes"):
                northern.add(zid)
    return SubregionPartition(zones, labels, northern)


def write_partition(part: SubregionPartition, grid_path, table_path) -> None:
    write_ascii_grid(part.zones, grid_path)
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARTITION_FIELDS)
        for zid in sorted(set(part.labels) | set(part.zone_ids())):
            admin, climate = part.labels.get(zid, ("", ""))
            w.writerow([zid, admin, climate, int(zid in part.northern_ids)])


def _check_cells(samples, spec: GridSpec):
    for s in samples:
        if not (0 <= s.row < spec.n_rows and 0 <= s.col < spec.n_cols):
            raise GridMismatchError(f"sample cell {s.cell} is outside the partition grid {spec.shape}")


def assign_subregion(samples, part: SubregionPartition, spec: GridSpec | None = None,
                     tally: Counter | None = None) -> dict:
    """Group samples by the zone id of their cell; nodata-zone samples are dropped."""
    if spec is not None:
        part.spec.check_compatible(spec, "samples and partition")
    _check_cells(samples, part.spec)
    z = part.zone_array()
    out: dict[int, list] = {}
    for s in samples:
        zid = int(z[s.row, s.col])
        if zid < 0:
            if tally is not None:
                tally["zone_nodata"] += 1
            continue
        out.setdefault(zid, []).append(s)
    return dict(sorted(out.items()))


@dataclass
class NorthernSets:
    sets: dict
    untrainable: list


def northern_training_sets(samples, part: SubregionPartition, lat_limit: float = NORTHERN_LAT_LIMIT,
                           radius: float = NORTHERN_RADIUS_M, min_samples: int = MIN_ZONE_SAMPLES,
                           mapped: np.ndarray | None = None) -> NorthernSets:
    """Borrowed training sets for zones beyond lidar coverage.

    A sample joins a northern zone's set when the Euclidean distance in
    projected meters from its cell center to the nearest cell center of the
    zone is at most ``radius``. ``mapped`` optionally restricts the zone cells
    considered (e.g. to the urban mask). Zones with fewer than ``min_samples``
    borrowed samples are listed as untrainable.
    """
    _check_cells(samples, part.spec)
    northern = set(part.northern_ids) or derive_northern_ids(part.zones, lat_limit)
    spec = part.spec
    z = part.zone_array()
    if samples:
        sx, sy = spec.cell_center(np.array([s.row for s in samples]), np.array([s.col for s in samples]))
        pts = np.column_stack([sx, sy])
    sets, untrainable = {}, []
    for zid in sorted(northern):
        cells = z == zid
        if mapped is not None:
            cells &= mapped
        rows, cols = np.nonzero(cells)
        chosen = []
        if rows.size and samples:
            cx, cy = spec.cell_center(rows, cols)
            dist, _ = cKDTree(np.column_stack([cx, cy])).query(pts)
            chosen = [s for s, d in zip(samples, dist) if d <= radius]
        sets[zid] = chosen
        if len(chosen) < min_samples:
            untrainable.append(zid)
    return NorthernSets(sets, untrainable)


def training_rows(samples, stack):
    """Feature rows and targets for samples; returns ``(X, y, keep)``."""
    rows = np.array([s.row for s in samples], dtype=np.int64)
    cols = np.array([s.col for s in samples], dtype=np.int64)
    X = stack.rows_at(rows, cols) if samples else np.empty((0, len(stack.names)))
    y = np.array([s.mean_height for s in samples], dtype=np.float64)
    keep = np.isfinite(X).all(axis=1)
    return X, y, keep


class SubregionHeightModel(RegressorMixin, BaseEstimator):
    """One forest per zone, routed by a zone label per row.

    ``fit(X, y, zones)`` trains a forest for every distinct label; a row may
    appear several times with different labels (borrowed samples). Zones with
    fewer than ``min_zone_samples`` rows are skipped and listed in
    ``untrainable_``.
    """

    def __init__(self, n_trees=500, mtry=None, min_node=5, bootstrap=True, random_state=None,
                 n_jobs=1, min_zone_samples=MIN_ZONE_SAMPLES):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_node = min_node
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.min_zone_samples = min_zone_samples

    def zone_seed(self, zid: int) -> int:
        return int(self.random_state) + 1_000_003 * int(zid)

    def fit(self, X, y, zones, feature_names=None):
        if self.random_state is None:
            raise TrainingError("random_state (seed) is required")
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        zones = np.asarray(zones, dtype=np.int64)
        if not (X.shape[0] == y.shape[0] == zones.shape[0]):
            raise TrainingError("X, y and zones must have one entry per row")
        self.models_ = {}
        self.untrainable_ = []
        for zid in np.unique(zones):
            sel = zones == zid
            if sel.sum() < max(int(self.min_zone_samples), MIN_TRAIN_ROWS):
                self.untrainable_.append(int(zid))
                continue
            model = ForestRegressor(
                n_trees=self.n_trees, mtry=self.mtry, min_node=self.min_node, bootstrap=self.bootstrap,
                random_state=self.zone_seed(zid), n_jobs=self.n_jobs, subregion_id=int(zid))
            self.models_[int(zid)] = model.fit(X[sel], y[sel], feature_names=feature_names)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X, zones):
        check_is_fitted(self, "models_")
        return predict_by_zone(self.models_, X, zones)


def predict_by_zone(models: dict, X, zones) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    zones = np.asarray(zones, dtype=np.int64)
    missing = set(int(z) for z in np.unique(zones)) - set(models)
    if missing:
        raise MissingModelError(missing)
    out = np.empty(X.shape[0])
    for zid in np.unique(zones):
        sel = zones == zid
        out[sel] = models[int(zid)].predict(X[sel])
    return out


def map_heights(models: dict, stack, mask: Raster, part: SubregionPartition,
                tally: Counter | None = None) -> Raster:
    """Predict every masked cell with its own zone's model.

    Output is nodata outside the mask, on nodata zones and wherever any
    feature is nodata.
    """
    spec = stack.spec
    spec.check_compatible(mask.spec, "feature stack and urban mask")
    spec.check_compatible(part.spec, "feature stack and partition")
    in_mask = mask.valid & (mask.values == 1)
    z = part.zone_array()
    needed = set(int(v) for v in np.unique(z[in_mask & (z >= 0)]))
    missing = needed - set(models)
    if missing:
        raise MissingModelError(missing)
    out = np.full(spec.shape, np.nan)
    X = stack.to_matrix()
    finite = np.isfinite(X).all(axis=1).reshape(spec.shape)
    target = in_mask & (z >= 0) & finite
    if tally is not None:
        tally["map_feature_nodata"] += int((in_mask & (z >= 0) & ~finite).sum())
        tally["map_zone_nodata"] += int((in_mask & (z < 0)).sum())
    flat = np.flatnonzero(target.ravel())
    if flat.size:
        pred = predict_by_zone(models, X[flat], z.ravel()[flat])
        out.ravel()[flat] = pred
    return Raster.from_masked(spec, out, mask.nodata)


def save_models(models: dict, directory) -> list:
    os.makedirs(directory, exist_ok=True)
    paths = []
    for zid in sorted(models):
        p = os.path.join(directory, f"zone_{zid}.model")
        save_model(models[zid], p)
        paths.append(p)
    return paths


def load_models(directory) -> dict:
    models = {}
    for name in sorted(os.listdir(directory)):
        if name.startswith("zone_") and name.endswith(".model"):
            m = load_model(os.path.join(directory, name))
            models[int(m.subregion_id)] = m
    return models
