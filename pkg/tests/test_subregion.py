from collections import Counter

import numpy as np
import pytest

from urbanheight.exceptions import GridMismatchError, MissingModelError
from urbanheight.features import FeatureStack
from urbanheight.forest import ForestRegressor
from urbanheight.projection import forward_array
from urbanheight.raster import GridSpec, Raster
from urbanheight.sampler import HeightSample
from urbanheight.subregion import (SubregionHeightModel, SubregionPartition, assign_subregion, derive_northern_ids,
                                   load_models, map_heights, northern_training_sets, predict_by_zone, read_partition,
                                   save_models, training_rows, write_partition)

SPEC = GridSpec(0.0, 900.0, 150.0, 6, 6)


def zones_raster(spec=SPEC):
    z = np.ones(spec.shape)
    z[:, 3:] = 2
    z[0, 0] = np.nan
    return Raster.from_masked(spec, z)


def test_assign_subregion_conservation():
    part = SubregionPartition(zones_raster())
    samples = [HeightSample(r, c, 5.0 + r + c, 3) for r in range(6) for c in range(6)]
    tally = Counter()
    sets = assign_subregion(samples, part, SPEC, tally)
    assert tally["zone_nodata"] == 1
    assert sum(len(v) for v in sets.values()) == 35
    assert HeightSample(2, 4, 11.0, 3) in sets[2] and HeightSample(2, 1, 8.0, 3) in sets[1]


def test_assign_subregion_grid_mismatch():
    part = SubregionPartition(zones_raster())
    with pytest.raises(GridMismatchError):
        assign_subregion([], part, GridSpec(0.0, 900.0, 150.0, 6, 7))
    with pytest.raises(GridMismatchError):
        assign_subregion([HeightSample(9, 0, 5.0, 3)], part)


def test_partition_files_round_trip(tmp_path):
    part = SubregionPartition(zones_raster(), {1: ("A", "Cfb"), 2: ("B", "Dfb")}, {2})
    write_partition(part, tmp_path / "p.asc", tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "zone_id,admin,climate,is_northern"
    back = read_partition(tmp_path / "p.asc", tmp_path / "p.csv")
    assert back.zones == part.zones and back.labels == part.labels and back.northern_ids == {2}


def _northern_setup(distances_km):
    """Zone 9 cells at the top of a tall grid; samples directly south of them."""
    cs = 10_000.0
    # origin placed north of 51.6 degrees so row 0 is a high-latitude band
    _, y60 = forward_array(np.array([0.0]), np.array([60.0]))
    spec = GridSpec(0.0, float(y60[0]), cs, 90, 3)
    z = np.full(spec.shape, 1.0)
    z[0, :] = 9
    part = SubregionPartition(Raster(spec, z), northern_ids={9})
    samples = [HeightSample(int(round(d * 1000 / cs)), 1, 10.0, 3) for d in distances_km]
    return part, samples


def test_northern_rule_distances():
    part, samples = _northern_setup([100, 600, 700])
    res = northern_training_sets(samples, part, min_samples=1)
    assert res.sets[9] == samples[:2]
    assert res.untrainable == []
    res = northern_training_sets(samples, part, min_samples=10)
    assert res.untrainable == [9]


def test_northern_zone_derivation():
    part, _ = _northern_setup([])
    assert derive_northern_ids(part.zones, 51.6) == {9}
    # without the table flag the rule falls back to the derived set
    part.northern_ids = set()
    part2, samples = _northern_setup([50])
    part2.northern_ids = set()
    assert northern_training_sets(samples, part2, min_samples=1).sets[9] == samples


def _stack(spec, rng, p=4):
    data = rng.normal(size=(p,) + spec.shape)
    return FeatureStack(spec, [f"f{i}" for i in range(p)], data)


def test_zone_models_and_routing():
    rng = np.random.default_rng(0)
    spec = GridSpec(0.0, 1500.0, 150.0, 10, 10)
    stack = _stack(spec, rng)
    zr = np.ones(spec.shape)
    zr[:, 5:] = 2
    part = SubregionPartition(Raster(spec, zr))
    y_of = lambda r, c: 20.0 + 5 * stack.data[0, r, c] if c < 5 else 50.0 + stack.data[1, r, c]  # noqa: E731
    samples = [HeightSample(r, c, float(y_of(r, c)), 3) for r in range(10) for c in range(10)]
    X, y, keep = training_rows(samples, stack)
    zones = np.array([int(zr[s.row, s.col]) for s in samples])
    model = SubregionHeightModel(n_trees=10, random_state=3).fit(X, y, zones, stack.names)
    assert sorted(model.models_) == [1, 2] and model.untrainable_ == []
    assert model.models_[1].random_state != model.models_[2].random_state
    mask = Raster.full(spec, 1.0)
    hmap = map_heights(model.models_, stack, mask, part)
    m = hmap.masked()
    # each zone's cells stay within that zone's training range
    assert m[:, :5].max() <= y[zones == 1].max() and m[:, :5].min() >= y[zones == 1].min()
    assert m[:, 5:].min() >= y[zones == 2].min()
    # adjacent cells across the boundary use different models
    x45 = stack.data[:, 0, 4:6].T
    assert m[0, 4] == model.models_[1].predict(x45[:1])[0]
    assert m[0, 5] == model.models_[2].predict(x45[1:])[0]
    assert np.array_equal(model.predict(X, zones), predict_by_zone(model.models_, X, zones))


def test_map_nodata_pattern():
    rng = np.random.default_rng(1)
    spec = GridSpec(0.0, 900.0, 150.0, 6, 6)
    stack = _stack(spec, rng)
    stack.data[2, 3, 3] = np.nan
    X = stack.to_matrix()
    X = X[np.isfinite(X).all(axis=1)]
    model = ForestRegressor(n_trees=3, random_state=0, subregion_id=1).fit(X[:30], rng.uniform(5, 30, 30))
    zr = np.ones(spec.shape)
    zr[5, 5] = np.nan
    part = SubregionPartition(Raster.from_masked(spec, zr))
    mask_arr = np.ones(spec.shape)
    mask_arr[0, :] = np.nan
    mask = Raster.from_masked(spec, mask_arr)
    tally = Counter()
    out = map_heights({1: model}, stack, mask, part, tally)
    expect_nodata = np.isnan(mask_arr) | np.isnan(zr)
    expect_nodata[3, 3] = True
    assert np.array_equal(~out.valid, expect_nodata)
    assert tally["map_feature_nodata"] == 1 and tally["map_zone_nodata"] == 1


def test_missing_zone_model_names_zones():
    rng = np.random.default_rng(2)
    stack = _stack(SPEC, rng)
    part = SubregionPartition(zones_raster())
    model = ForestRegressor(n_trees=2, random_state=0, subregion_id=1).fit(stack.to_matrix()[:20],
                                                                           rng.uniform(5, 9, 20))
    with pytest.raises(MissingModelError) as e:
        map_heights({1: model}, stack, Raster.full(SPEC, 1.0), part)
    assert "2" in str(e.value)


def test_untrainable_zone_and_model_files(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(25, 3))
    y = rng.uniform(5, 20, 25)
    zones = np.array([1] * 20 + [2] * 5)
    model = SubregionHeightModel(n_trees=3, random_state=0).fit(X, y, zones)
    assert list(model.models_) == [1] and model.untrainable_ == [2]
    save_models(model.models_, tmp_path / "m")
    assert sorted(p.name for p in (tmp_path / "m").iterdir()) == ["zone_1.model"]
    back = load_models(tmp_path / "m")
    assert np.array_equal(back[1].predict(X), model.models_[1].predict(X))


def test_zone_fit_reproducible():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(40, 3))
    y = rng.uniform(5, 20, 40)
    zones = np.repeat([1, 2], 20)
    a = SubregionHeightModel(n_trees=4, random_state=7).fit(X, y, zones)
    b = SubregionHeightModel(n_trees=4, random_state=7).fit(X, y, zones)
    assert np.array_equal(a.predict(X, zones), b.predict(X, zones))
