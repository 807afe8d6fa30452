"""The ordered 323-band explanatory stack."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from ..asciigrid import read_stack, write_stack
from ..exceptions import GridMismatchError
from ..raster import DEFAULT_NODATA, GridSpec, Raster
from .glcm import DEFAULT_LEVELS, TEXTURES, glcm_features
from .indices import INDICES, index_array
from .scenes import OPTICAL_L, OPTICAL_S, RADAR, RADAR_BANDS
from .temporal import OPTICAL_STATS, RADAR_STATS, temporal_stats_cube
from .terrain import terrain_features

N_FEATURES = 323
WINDOWS = {"L": 2, "S": 6, "R": 5}
TERRAIN_NAMES = ("T_elev", "T_slope", "T_aspect")


def _sensor_names(prefix, variables, stats):
    stat_names = [f"{prefix}_{v}_{s}" for v in variables for s in stats]
    tex_names = [f"{n}_{t}" for n in stat_names for t in TEXTURES]
    return stat_names, tex_names


def feature_names() -> list[str]:
    """Canonical band order: L, S, radar, terrain; stat bands before their textures."""
    names = []
    for prefix in ("L", "S"):
        stat, tex = _sensor_names(prefix, INDICES, OPTICAL_STATS)
        names += stat + tex
    stat, tex = _sensor_names("R", RADAR_BANDS, RADAR_STATS)
    names += stat + tex
    names += list(TERRAIN_NAMES)
    return names


class FeatureStack:
    """Named bands on one grid, held as a ``(bands, rows, cols)`` array with NaN nodata."""

    def __init__(self, spec: GridSpec, names, data, nodata: float = DEFAULT_NODATA):
        data = np.asarray(data, dtype=np.float64)
        names = list(names)
        if data.shape != (len(names),) + spec.shape:
            raise ValueError(f"data shape {data.shape} does not match {len(names)} bands on {spec.shape}")
        if len(set(names)) != len(names):
            raise ValueError("band names must be unique")
        self.spec = spec
        self.names = names
        self.data = data
        self.nodata = nodata
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def band(self, name: str) -> Raster:
        return Raster.from_masked(self.spec, self.data[self._index[name]], self.nodata)

    def rasters(self):
        return [Raster.from_masked(self.spec, b, self.nodata) for b in self.data]

    def to_matrix(self) -> np.ndarray:
        """Pixel-by-feature matrix ``(n_rows * n_cols, n_bands)``, row-major pixels."""
        return self.data.reshape(len(self.names), -1).T

    def rows_at(self, rows, cols) -> np.ndarray:
        return self.data[:, np.asarray(rows), np.asarray(cols)].T

    def write(self, directory) -> None:
        write_stack(self.names, self.rasters(), directory)

    @classmethod
    def read(cls, directory, sphere_radius=None) -> "FeatureStack":
        kwargs = {} if sphere_radius is None else {"sphere_radius": sphere_radius}
        names, rasters = read_stack(directory, **kwargs)
        spec = rasters[0].spec
        for r in rasters:
            spec.check_compatible(r.spec, "feature bands")
        return cls(spec, names, np.stack([r.masked() for r in rasters]), rasters[0].nodata)


def _textures(stat_bands, window, levels):
    out = []
    for band in stat_bands:
        out.extend(glcm_features(band, window, levels))
    return out


def _optical_block(prefix, scenes, shape, window, levels):
    stat_bands = []
    for idx in INDICES:
        if scenes:
            cube = np.stack([index_array(s, idx) for s in scenes])
        else:
            cube = np.full((1,) + shape, np.nan)
        stats = temporal_stats_cube(cube, OPTICAL_STATS)
        stat_bands += [stats[s] for s in OPTICAL_STATS]
    return stat_bands + _textures(stat_bands, window, levels)


def _radar_block(scenes, shape, window, levels):
    stat_bands = []
    for b in RADAR_BANDS:
        if scenes:
            cube = np.stack([s.band(b) for s in scenes])
        else:
            cube = np.full((1,) + shape, np.nan)
        stats = temporal_stats_cube(cube, RADAR_STATS)
        stat_bands += [stats[s] for s in RADAR_STATS]
    return stat_bands + _textures(stat_bands, window, levels)


def assemble_feature_stack(optical_L_scenes, optical_S_scenes, radar_scenes, dem: Raster,
                           levels: int = DEFAULT_LEVELS, windows=None) -> FeatureStack:
    """Build the full explanatory stack from filtered scenes and a DEM."""
    windows = {**WINDOWS, **(windows or {})}
    spec = dem.spec
    for group, sensor in ((optical_L_scenes, OPTICAL_L), (optical_S_scenes, OPTICAL_S), (radar_scenes, RADAR)):
        for s in group:
            if s.sensor != sensor:
                raise ValueError(f"expected {sensor} scenes, got a {s.sensor} scene")
            if s.spec != spec:
                raise GridMismatchError(f"{sensor} scene {s.scene_id or s.acquired} is not on the DEM grid")
    shape = spec.shape
    bands = []
    bands += _optical_block("L", list(optical_L_scenes), shape, windows["L"], levels)
    bands += _optical_block("S", list(optical_S_scenes), shape, windows["S"], levels)
    bands += _radar_block(list(radar_scenes), shape, windows["R"], levels)
    bands += [r.masked() for r in terrain_features(dem)]
    names = feature_names()
    assert len(bands) == len(names) == N_FEATURES
    return FeatureStack(spec, names, np.stack(bands), dem.nodata)


class FeatureStackBuilder(BaseEstimator):
    """Estimator-style wrapper holding the texture settings.

    Parameters
    ----------
    levels : int
        Gray levels for GLCM quantization.
    window_L, window_S, window_R : int
        Texture window side per sensor.
    """

    def __init__(self, levels=DEFAULT_LEVELS, window_L=2, window_S=6, window_R=5):
        self.levels = levels
        self.window_L = window_L
        self.window_S = window_S
        self.window_R = window_R

    def fit(self, *args, **kwargs):
        return self

    def transform(self, optical_L_scenes, optical_S_scenes, radar_scenes, dem) -> FeatureStack:
        windows = {"L": self.window_L, "S": self.window_S, "R": self.window_R}
        return assemble_feature_stack(optical_L_scenes, optical_S_scenes, radar_scenes, dem,
                                      self.levels, windows)

    def get_feature_names_out(self, input_features=None):
        return np.asarray(feature_names(), dtype=object)
