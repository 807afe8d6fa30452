"""Spectral indices for optical scenes."""

from __future__ import annotations

import numpy as np

from ..raster import Raster
from .scenes import Scene

INDICES = ("ndvi", "ndbi", "mndwi", "dvi64", "rvi64")


def _normalized_difference(a, b):
    den = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (a - b) / den
    out[den == 0] = np.nan
    return out


def index_array(s: Scene, index: str) -> np.ndarray:
    """Index values as a float array with NaN where masked or undefined."""
    if not s.is_optical:
        raise ValueError(f"spectral indices need an optical scene, got {s.sensor}")
    index = index.lower()
    if index == "ndvi":
        return _normalized_difference(s.band("nir"), s.band("red"))
    if index == "ndbi":
        return _normalized_difference(s.band("swir1"), s.band("nir"))
    if index == "mndwi":
        return _normalized_difference(s.band("green"), s.band("swir1"))
    if index == "dvi64":
        return s.band("swir1") - s.band("red")
    if index == "rvi64":
        red = s.band("red")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = s.band("swir1") / red
        out[red == 0] = np.nan
        return out
    raise ValueError(f"unknown index {index!r}; expected one of {INDICES}")


def spectral_index(s: Scene, index: str, nodata: float | None = None) -> Raster:
    data = index_array(s, index)
    if nodata is None:
        nodata = next(iter(s.bands.values())).nodata
    return Raster.from_masked(s.spec, data, nodata)
