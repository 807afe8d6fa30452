import datetime as dt
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from urbanheight.features.scenes import OPTICAL_BANDS, RADAR, RADAR_BANDS, Scene  # noqa: E402
from urbanheight.raster import GridSpec, Raster  # noqa: E402


@pytest.fixture
def small_spec():
    return GridSpec(origin_x=0.0, origin_y=1500.0, cell_size=150.0, n_rows=10, n_cols=10)


def make_scene(sensor, spec, rng, cloud=0.1, day=1, mask=None):
    if sensor == RADAR:
        bands = {b: Raster(spec, rng.normal(-10, 2, spec.shape)) for b in RADAR_BANDS}
        cloud = None
    else:
        bands = {b: Raster(spec, rng.uniform(0.02, 0.5, spec.shape)) for b in OPTICAL_BANDS}
    pm = None if mask is None else Raster.from_masked(spec, np.where(mask, 1.0, np.nan))
    return Scene(sensor, bands, dt.date(2020, 1, day), cloud, pm, scene_id=f"{sensor}_{day}")
