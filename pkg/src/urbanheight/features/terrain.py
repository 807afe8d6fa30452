"""Elevation, slope and aspect from a DEM (Horn 3x3 gradient)."""

from __future__ import annotations

import numpy as np

from ..raster import Raster


def horn_gradient(z: np.ndarray, cell_size: float):
    """East and north gradients with edge replication at the borders."""
    p = np.pad(z, 1, mode="edge")
    a, b, c = p[:-2, :-2], p[:-2, 1:-1], p[:-2, 2:]
    d, f = p[1:-1, :-2], p[1:-1, 2:]
    g, h, i = p[2:, :-2], p[2:, 1:-1], p[2:, 2:]
    dzdx = ((c + 2 * f + i) - (a + 2 * d + g)) / (8.0 * cell_size)
    # row index grows southwards, so the top row is the northern side
    dzdy = ((a + 2 * b + c) - (g + 2 * h + i)) / (8.0 * cell_size)
    return dzdx, dzdy


def terrain_features(dem: Raster):
    """Return ``(elevation, slope, aspect)`` rasters.

    Slope is in degrees; aspect is the downslope direction in degrees
    clockwise from north, nodata on flat cells. Nodata elevations propagate
    to every cell whose 3x3 neighbourhood touches them.
    """
    z = dem.masked()
    dzdx, dzdy = horn_gradient(z, dem.spec.cell_size)
    slope = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    aspect = np.degrees(np.arctan2(-dzdx, -dzdy)) % 360.0
    flat = (dzdx == 0) & (dzdy == 0)
    aspect = np.where(flat, np.nan, aspect)
    spec, nd = dem.spec, dem.nodata
    return (Raster.from_masked(spec, z, nd), Raster.from_masked(spec, slope, nd),
            Raster.from_masked(spec, aspect, nd))
