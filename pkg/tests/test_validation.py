import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.affinity import rotate
from shapely.geometry import Polygon

from urbanheight.exceptions import GridMismatchError
from urbanheight.raster import GridSpec, Raster
from urbanheight.validation import (BuildingPolygon, ValidationReport, area_weighted_reference,
                                    building_area_per_cell, compare_products, downscale_raster, pearson_r,
                                    read_reference_csv, read_reports_csv, rmse, write_reference_csv,
                                    write_reports_csv)

SPEC = GridSpec(0.0, 300.0, 150.0, 2, 2)


def test_pearson_closed_forms():
    a = np.arange(10.0)
    assert pearson_r(a, 2 * a + 1) == 1.0
    assert pearson_r([1, 2, 3], [6, 4, 2]) == -1.0
    assert pearson_r([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_pearson_undefined_is_nan():
    assert math.isnan(pearson_r([1, 2, 3], [5, 5, 5]))
    assert math.isnan(pearson_r([1], [2]))
    # paired nodata dropped before the count
    assert math.isnan(pearson_r([1, None, 3], [2, 4, np.nan]))
    assert pearson_r([1, None, 2, 3], [1, 9, 2, 3]) == 1.0


def test_rmse_closed_forms():
    assert rmse([1, 2], [2, 4]) == math.sqrt(2.5)
    assert rmse([3, 4, 5], [3, 4, 5]) == 0.0
    assert rmse(np.arange(5.0) + 1.5, np.arange(5.0)) == 1.5


vecs = st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30)


@settings(max_examples=80, deadline=None)
@given(vecs, st.data())
def test_pearson_symmetry_and_affine(a, data):
    b = data.draw(st.lists(st.floats(-1e3, 1e3), min_size=len(a), max_size=len(a)))
    r = pearson_r(a, b)
    if math.isnan(r):
        return
    assert pearson_r(b, a) == pytest.approx(r, abs=1e-9)
    s = data.draw(st.floats(0.1, 10))
    k = data.draw(st.floats(-100, 100))
    a2 = np.asarray(a) * s + k
    if np.ptp(a2) < 1e-6 * max(1.0, np.abs(a2).max()):
        return
    assert pearson_r(a2, b) == pytest.approx(r, abs=1e-6)
    assert pearson_r(-np.asarray(a), b) == pytest.approx(-r, abs=1e-9)


@settings(max_examples=80, deadline=None)
@given(vecs, st.floats(-50, 50))
def test_rmse_shift_and_sign(a, k):
    a = np.asarray(a)
    b = a[::-1].copy()
    assert rmse(a, b) >= 0
    assert rmse(a + k, b + k) == pytest.approx(rmse(a, b), abs=1e-9)
    assert (rmse(a, b) == 0) == np.array_equal(a, b)


def test_area_weighted_examples():
    one = area_weighted_reference([BuildingPolygon.rectangle(10, 160, 60, 200, 12.0)], SPEC)
    assert one.value_at(0, 0) == 12.0 and one.value_at(1, 0) is None
    two = area_weighted_reference([BuildingPolygon.rectangle(10, 160, 20, 170, 10.0),
                                   BuildingPolygon.rectangle(30, 160, 60, 170, 20.0)], SPEC)
    assert two.value_at(0, 0) == 17.5
    # straddling the column boundary at x = 150
    straddle = [BuildingPolygon.rectangle(140, 200, 160, 210, 8.0)]
    area = building_area_per_cell(straddle, SPEC)
    assert area[0, 0] == 100.0 and area[0, 1] == 100.0
    assert area_weighted_reference(straddle, SPEC).masked()[0].tolist() == [8.0, 8.0]


def test_rectangle_and_polygon_routes_agree():
    rng = np.random.default_rng(5)
    spec = GridSpec(0.0, 1500.0, 150.0, 10, 10)
    rects, generic = [], []
    for _ in range(40):
        x0, y0 = rng.uniform(0, 1300, 2)
        w, h = rng.uniform(5, 200, 2)
        hgt = rng.uniform(3, 60)
        rects.append(BuildingPolygon.rectangle(x0, y0, x0 + w, y0 + h, hgt))
        # extra collinear vertex forces the general clipping route
        generic.append(BuildingPolygon(Polygon([(x0, y0), (x0 + w / 2, y0), (x0 + w, y0), (x0 + w, y0 + h),
                                                (x0, y0 + h)]), hgt))
    assert generic[0].axis_aligned_bounds() is None
    a = building_area_per_cell(rects, spec)
    b = building_area_per_cell(generic, spec)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9)
    ra, rb = area_weighted_reference(rects, spec), area_weighted_reference(generic, spec)
    assert np.array_equal(ra.valid, rb.valid)
    assert np.allclose(ra.masked()[ra.valid], rb.masked()[rb.valid], rtol=1e-9)


def _random_buildings(rng, n, extent):
    out = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, extent - 200, 2)
        w, h = rng.uniform(1, 180, 2)
        hgt = rng.uniform(3, 80)
        bp = BuildingPolygon.rectangle(x0, y0, x0 + w, y0 + h, hgt)
        if rng.random() < 0.4:
            bp = BuildingPolygon(rotate(bp.footprint, rng.uniform(0, 90)), hgt)
        out.append(bp)
    return out


def mass_error(seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec(0.0, 1800.0, 150.0, 12, 12)
    # keep everything inside the grid so no mass leaves it
    polys = [p for p in _random_buildings(rng, 60, 1800.0)
             if p.footprint.bounds[0] >= 0 and p.footprint.bounds[2] <= 1800
             and p.footprint.bounds[1] >= 0 and p.footprint.bounds[3] <= 1800]
    ref = area_weighted_reference(polys, spec)
    area = building_area_per_cell(polys, spec)
    got = float(np.nansum(ref.masked() * area))
    want = sum(p.height * p.area for p in polys)
    return abs(got - want) / want


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mass_conservation(seed):
    assert mass_error(seed) < 1e-9


def test_degenerate_polygon_skipped():
    tally = Counter()
    polys = [BuildingPolygon.rectangle(10, 160, 10, 200, 5.0), BuildingPolygon.rectangle(10, 160, 20, 200, 5.0)]
    ref = area_weighted_reference(polys, SPEC, tally=tally)
    assert tally["degenerate_polygons"] == 1 and ref.value_at(0, 0) == 5.0


def test_downscale_examples():
    fine = Raster.from_masked(GridSpec(0.0, 300.0, 150.0, 2, 2), [[2, 4], [6, 8]])
    coarse = downscale_raster(fine, GridSpec(0.0, 300.0, 300.0, 1, 1))
    assert coarse.value_at(0, 0) == 5.0
    three_nd = Raster.from_masked(fine.spec, [[np.nan, np.nan], [np.nan, 7.25]])
    assert downscale_raster(three_nd, GridSpec(0.0, 300.0, 300.0, 1, 1)).value_at(0, 0) == 7.25
    all_nd = Raster.from_masked(fine.spec, np.full((2, 2), np.nan))
    assert downscale_raster(all_nd, GridSpec(0.0, 300.0, 300.0, 1, 1)).value_at(0, 0) is None
    uniform = Raster.full(GridSpec(0.0, 900.0, 150.0, 6, 6), 3.5)
    assert np.all(downscale_raster(uniform, GridSpec(0.0, 900.0, 450.0, 2, 2)).values == 3.5)


def test_downscale_misaligned():
    fine = Raster.full(GridSpec(0.0, 900.0, 150.0, 6, 6), 1.0)
    with pytest.raises(GridMismatchError):
        downscale_raster(fine, GridSpec(0.0, 900.0, 400.0, 2, 2))
    with pytest.raises(GridMismatchError):
        downscale_raster(fine, GridSpec(10.0, 900.0, 300.0, 2, 2))


def downscale_composition_error(seed):
    rng = np.random.default_rng(seed)
    fine = Raster(GridSpec(0.0, 1800.0, 150.0, 12, 12), rng.uniform(0, 50, (12, 12)))
    mid = downscale_raster(fine, GridSpec(0.0, 1800.0, 300.0, 6, 6))
    via = downscale_raster(mid, GridSpec(0.0, 1800.0, 900.0, 2, 2))
    direct = downscale_raster(fine, GridSpec(0.0, 1800.0, 900.0, 2, 2))
    return float(np.max(np.abs(via.values - direct.values) / np.abs(direct.values)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_downscale_composition(seed):
    assert downscale_composition_error(seed) < 1e-12


def test_compare_identical_and_disjoint():
    spec = GridSpec(0.0, 600.0, 150.0, 4, 4)
    rng = np.random.default_rng(1)
    a = Raster(spec, rng.uniform(5, 30, (4, 4)))
    strata = Raster(spec, np.repeat([[1, 1, 2, 2]], 4, axis=0))
    reports, diff = compare_products(a, a, strata=strata)
    assert [r.stratum for r in reports] == ["all", "1", "2"]
    assert all(r.pearson_r == pytest.approx(1.0, abs=1e-12) and r.rmse == 0.0 for r in reports)
    assert np.all(diff.values == 0)
    left = np.full((4, 4), np.nan)
    left[:, :2] = 1.0
    right = np.full((4, 4), np.nan)
    right[:, 2:] = 1.0
    reports, diff = compare_products(Raster.from_masked(spec, left), Raster.from_masked(spec, right))
    assert reports[0].n == 0 and math.isnan(reports[0].pearson_r)
    assert not diff.valid.any()


def test_compare_grid_mismatch():
    a = Raster.full(GridSpec(0.0, 600.0, 150.0, 4, 4), 1.0)
    b = Raster.full(GridSpec(0.0, 600.0, 150.0, 4, 5), 1.0)
    with pytest.raises(GridMismatchError):
        compare_products(a, b)


def per_stratum_noise_recovery(seed=0):
    """Largest relative gap between per-stratum RMSE and the injected sigma."""
    rng = np.random.default_rng(seed)
    spec = GridSpec(0.0, 12000.0, 150.0, 80, 80)
    truth = rng.uniform(5, 40, spec.shape)
    strata = np.repeat(np.arange(1, 5), 20)[None, :].repeat(80, axis=0).astype(float)
    sigmas = {1: 0.5, 2: 1.0, 3: 2.0, 4: 4.0}
    noisy = truth + rng.normal(size=spec.shape) * np.vectorize(sigmas.get)(strata)
    mask_arr = np.ones(spec.shape)
    mask_arr[::7, ::5] = 0
    reports, _ = compare_products(Raster(spec, noisy), Raster(spec, truth), Raster(spec, mask_arr),
                                  Raster(spec, strata))
    worst = 0.0
    for rep in reports[1:]:
        worst = max(worst, abs(rep.rmse - sigmas[int(rep.stratum)]) / sigmas[int(rep.stratum)])
    return worst, reports


def test_per_stratum_noise_recovery():
    worst, reports = per_stratum_noise_recovery()
    assert worst < 0.1
    # masked-out cells are excluded from every report
    assert reports[0].n == 80 * 80 - len(range(0, 80, 7)) * len(range(0, 80, 5))


def test_reports_csv_round_trip(tmp_path):
    reps = [ValidationReport("all", 10, 0.875, 1.25), ValidationReport("3", 0, math.nan, math.nan)]
    write_reports_csv(reps, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "stratum,n,r,rmse" and lines[2] == "3,0,NA,NA"
    back = read_reports_csv(tmp_path / "r.csv")
    assert back[0] == reps[0] and back[1].n == 0 and math.isnan(back[1].pearson_r)


def test_reference_csv_round_trip(tmp_path):
    tri = BuildingPolygon(Polygon([(0, 0), (100, 0), (0, 100)]), 9.0)
    polys = [BuildingPolygon.rectangle(1.5, 2.5, 30.0, 40.0, 12.0), tri]
    write_reference_csv(polys, tmp_path / "ref.csv")
    back = read_reference_csv(tmp_path / "ref.csv")
    assert back[0] == polys[0]
    assert back[1].height == 9.0 and back[1].footprint.equals(tri.footprint)
