"""Exit criteria, one test each. Every test prints a single PASS/FAIL line."""

import datetime as dt
import math
import time
from collections import Counter

import numpy as np
import pytest

import oracles
from conftest import make_scene
from test_pipeline import same_tree
from test_subregion import _northern_setup
from test_validation import downscale_composition_error, mass_error
from urbanheight.cli import main
from urbanheight.features import assemble_feature_stack
from urbanheight.features.glcm import glcm_features
from urbanheight.features.scenes import OPTICAL_L, OPTICAL_S, RADAR
from urbanheight.features.temporal import RADAR_STATS, temporal_stats
from urbanheight.forest import ForestRegressor, dumps
from urbanheight.pipeline import load_config, run_pipeline
from urbanheight.projection import DEFAULT_RADIUS, GeoPoint, forward_array, inverse_array, solve_theta_array
from urbanheight.raster import GridSpec, Raster
from urbanheight.sampler import Footprint, HeightSample, HeightSampler
from urbanheight.subregion import northern_training_sets
from urbanheight.synthetic import SynthParams, generate_synthetic_scene, write_synthetic_scene
from urbanheight.validation import BuildingPolygon, area_weighted_reference, downscale_raster, pearson_r, rmse

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line straight to the terminal, then assert."""

    def _report(number, title, ok, elapsed, limit, detail=""):
        ok = bool(ok) and elapsed < limit
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {title}: {'PASS' if ok else 'FAIL'} "
                  f"({elapsed:.2f} s of {limit:g} s{'; ' + detail if detail else ''})")
        assert ok, detail

    return _report


def test_criterion_01_feature_count(verdict):
    spec = GridSpec(0.0, 64 * 150.0, 150.0, 64, 64)
    rng = np.random.default_rng(0)
    L = [make_scene(OPTICAL_L, spec, rng, day=d) for d in (1, 2, 3)]
    S = [make_scene(OPTICAL_S, spec, rng, day=d) for d in (1, 2, 3)]
    R = [make_scene(RADAR, spec, rng, day=d) for d in (1, 2, 3)]
    dem = Raster(spec, rng.uniform(0, 100, spec.shape))
    t0 = time.perf_counter()
    stack = assemble_feature_stack(L, S, R, dem)
    elapsed = time.perf_counter() - t0
    blocks = Counter(n.split("_")[0] for n in stack.names)
    optical = blocks["L"] + blocks["S"]
    ok = (len(stack) == 323 and stack.data.shape == (323, 64, 64) and optical == 250
          and blocks["R"] == 70 and blocks["T"] == 3 and len(set(stack.names)) == 323)
    verdict(1, "feature count", ok, elapsed, 1.0,
            f"{len(stack)} bands = {optical} optical + {blocks['R']} radar + {blocks['T']} terrain")


def test_criterion_02_glcm_oracle(verdict):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst, shape_ok = 0.0, True
    for k in range(200):
        n_r, n_c = rng.integers(1, 17, 2)
        levels = (2, 8, 32)[k % 3]
        window = int(rng.integers(2, 8))
        band = rng.normal(size=(n_r, n_c))
        band[rng.random(band.shape) < 0.1] = np.nan
        got = np.stack(glcm_features(band, window, levels))
        q = oracles.quantize([[None if math.isnan(v) else v for v in row] for row in band], levels)
        ref = np.full(got.shape, np.nan)
        for r in range(n_r):
            for c in range(n_c):
                px = oracles.glcm_pixel(q, r, c, window, levels)
                if px is not None:
                    ref[:, r, c] = px
        shape_ok &= bool(np.array_equal(np.isnan(got), np.isnan(ref)))
        ok = ~np.isnan(ref)
        if ok.any():
            worst = max(worst, float(np.max(np.abs(got[ok] - ref[ok]))))
    elapsed = time.perf_counter() - t0
    verdict(2, "GLCM oracle", shape_ok and worst < 1e-12, elapsed, 10.0,
            f"max abs diff {worst:.2e}, nodata pattern {'equal' if shape_ok else 'differs'}")


def test_criterion_03_percentile_oracle(verdict):
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    mismatches, monotone = 0, True
    keys = ("mean", "var") + RADAR_STATS[2:]
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        series = list(rng.normal(size=n) * 10 ** rng.uniform(-3, 3))
        for i in range(n):
            if rng.random() < 0.2:
                series[i] = None if rng.random() < 0.5 else float("nan")
        got = temporal_stats(series, keys)
        valid = [v for v in series if v is not None and not math.isnan(v)]
        if not valid:
            mismatches += not all(math.isnan(got[k]) for k in keys)
            continue
        ref = oracles.series_stats(valid)
        mismatches += any(got[k] != ref[k] for k in keys)
        seq = [got[k] for k in ("p0", "p10", "p25", "p90", "p100")]
        monotone &= all(a <= b for a, b in zip(seq, seq[1:]))
    elapsed = time.perf_counter() - t0
    verdict(3, "percentile oracle", mismatches == 0 and monotone, elapsed, 5.0,
            f"{mismatches} mismatching series, monotone {monotone}")


def test_criterion_04_projection(verdict):
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    lats = rng.uniform(-math.pi / 2, math.pi / 2, 100_000)
    lats[:3] = (0.0, math.pi / 2, -math.pi / 2)
    th = solve_theta_array(lats)
    res = float(np.max(np.abs(2 * th + np.sin(2 * th) - math.pi * np.sin(lats))))
    lon = rng.uniform(-180, 180, 100_000)
    lat = np.degrees(lats)
    x, y = forward_array(lon, lat)
    lon2, lat2 = inverse_array(x, y)
    x2, y2 = forward_array(lon2, lat2)
    trip = float(np.max(np.hypot(x2 - x, y2 - y)))
    area_err = 0.0
    for _ in range(1000):
        lon0 = rng.uniform(-179, 178.99)
        lat0 = rng.uniform(-80, 80)
        qlon, qlat = oracles.quad_boundary(lon0, lat0, lon0 + 0.01, lat0 + 0.01)
        qx, qy = forward_array(qlon, qlat)
        a_sphere = oracles.sphere_quad_area(lon0, lat0, lon0 + 0.01, lat0 + 0.01, DEFAULT_RADIUS)
        area_err = max(area_err, abs(oracles.shoelace(qx, qy) - a_sphere) / a_sphere)
    elapsed = time.perf_counter() - t0
    ok = res < 1e-12 and trip < 1e-6 and area_err < 1e-5
    verdict(4, "projection", ok, elapsed, 5.0,
            f"residual {res:.1e}, round trip {trip:.1e} m, area rel err {area_err:.1e}")


def test_criterion_05_filtering_funnel(verdict):
    spec = GridSpec(1_000_000.0, 5_000_000.0, 150.0, 4, 4)
    settle = np.ones(spec.shape)
    settle[3, :] = np.nan
    settlement = Raster.from_masked(spec, settle)
    ndvi = np.zeros(spec.shape)
    ndvi[0, 1] = 0.9  # vegetated cell: RH85 is used there
    ndvi_p90 = Raster(spec, ndvi)
    day = dt.date(2021, 5, 1)
    rng = np.random.default_rng(5)

    def fp(row, col, rh95=12.0, rh85=None, quality=1, sens=0.95, degrade=0):
        x = spec.origin_x + (col + rng.uniform(0.1, 0.9)) * spec.cell_size
        y = spec.origin_y - (row + rng.uniform(0.1, 0.9)) * spec.cell_size
        lo, la = inverse_array(np.array([x]), np.array([y]))
        return Footprint(GeoPoint(float(lo[0]), float(la[0])), rh95 - 1.0 if rh85 is None else rh85, rh95,
                         quality, degrade, sens, day)

    fps = []
    fps += [fp(0, 0, rh95=h) for h in (10.0, 11.0, 12.0)]                 # sample 11.0 from 3
    fps += [fp(0, 1, rh95=30.0, rh85=h) for h in (6.0, 8.0, 10.0, 12.0)]  # vegetated: mean RH85 = 9.0
    fps += [fp(1, 1, rh95=h) for h in (20.0, 22.0, 24.0)]                 # sample 22.0
    fps += [fp(1, 1, quality=0) for _ in range(3)]                        # quality x3
    fps += [fp(1, 1, sens=s) for s in (0.5, 0.8, 0.89, 0.8999)]           # sensitivity x4
    fps += [fp(1, 1, degrade=d) for d in (1, 2, 3, 1, 2)]                 # degrade x5
    fps += [fp(3, c) for c in (0, 1, 2, 3, 0, 1)]                         # outside settlement x6
    fps += [fp(0, 0, rh95=h) for h in (2.5, 2.0, 1.0, 0.5, 2.49, 2.5, 0.0)]  # <= 2.5 m x7
    fps += [fp(2, 2, rh95=15.0), fp(2, 2, rh95=16.0), fp(2, 3, rh95=9.0)]  # count < 3: 3 heights in 2 cells
    fps += [fp(0, 1, rh95=30.0, rh85=2.0)]                                # vegetated, RH85 too low x1
    fps.append(fp(2, 0, quality=0, sens=0.1, degrade=2))                  # fails three rules; counted once
    t0 = time.perf_counter()
    sampler = HeightSampler()
    samples = sampler.transform(fps, settlement, ndvi_p90)
    elapsed = time.perf_counter() - t0
    expected = [HeightSample(0, 0, 11.0, 3), HeightSample(0, 1, 9.0, 4), HeightSample(1, 1, 22.0, 3)]
    t = sampler.tally_
    want = {"quality": 4, "sensitivity": 4, "degrade": 5, "outside_settlement": 6, "min_height": 8,
            "count": 3, "cells_below_count": 2, "outside_grid": 0}
    got = {k: t[k] for k in want}
    ok = samples == expected and got == want and t["input"] == len(fps)
    verdict(5, "filtering funnel", ok, elapsed, 1.0, f"samples {len(samples)}, tallies {got}")


def test_criterion_06_forest_properties(verdict):
    rng = np.random.default_rng(6)
    t0 = time.perf_counter()
    X = rng.normal(size=(200, 6))
    y = X @ rng.normal(size=6) + rng.normal(size=200)
    single = ForestRegressor(n_trees=1, mtry=6, min_node=1, bootstrap=False, random_state=0).fit(X, y)
    train_rmse = rmse(single.predict(X), y)
    forest = ForestRegressor(n_trees=50, random_state=1).fit(X, y)
    probes = rng.normal(scale=4, size=(1000, 6))
    pred = forest.predict(probes)
    bounded = pred.min() >= y.min() and pred.max() <= y.max()
    twin = ForestRegressor(n_trees=50, random_state=1).fit(X, y)
    threaded = ForestRegressor(n_trees=50, random_state=1, n_jobs=8).fit(X, y)
    same_model = dumps(forest) == dumps(twin) == dumps(threaded)
    same_pred = (np.array_equal(pred, twin.predict(probes))
                 and np.array_equal(pred.view(np.uint64), threaded.predict(probes).view(np.uint64)))
    elapsed = time.perf_counter() - t0
    ok = train_rmse == 0.0 and bounded and same_model and same_pred
    verdict(6, "forest properties", ok, elapsed, 30.0,
            f"train RMSE {train_rmse}, bounded {bounded}, identical model {same_model}, "
            f"identical predictions {same_pred}")


def test_criterion_07_synthetic_recovery(verdict, tmp_path):
    t0 = time.perf_counter()
    scene = generate_synthetic_scene(7, SynthParams(n_rows=96, n_cols=96, noise_sigma=2.0, n_zones=4))
    cfg_path = write_synthetic_scene(scene, str(tmp_path), forest={"n_trees": 60, "n_jobs": 1},
                                     holdout_fraction=0.2)
    result = run_pipeline(load_config(cfg_path))
    elapsed = time.perf_counter() - t0
    rep = {r.stratum: r for r in result["validation"]}["holdout_truth"]
    zones = result["counters"]["train.models"]
    ok = rep.pearson_r >= 0.85 and rep.rmse <= 3.0 and zones == 4 and rep.n > 0
    verdict(7, "synthetic recovery", ok, elapsed, 60.0,
            f"held-out n={rep.n}, r={rep.pearson_r:.4f}, RMSE={rep.rmse:.3f} m, zone models {zones}")


def test_criterion_08_validator(verdict):
    t0 = time.perf_counter()
    closed = (pearson_r(np.arange(5.0), 2 * np.arange(5.0) + 1) == 1.0
              and pearson_r([1, 2, 3], [6, 4, 2]) == -1.0
              and abs(pearson_r([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-15
              and rmse([1, 2], [2, 4]) == math.sqrt(2.5)
              and rmse([4, 5], [4, 5]) == 0.0
              and math.isnan(pearson_r([1, 2, 3], [2, 2, 2])))
    spec = GridSpec(0.0, 300.0, 150.0, 2, 2)
    mixed = area_weighted_reference([BuildingPolygon.rectangle(10, 160, 20, 170, 10.0),
                                     BuildingPolygon.rectangle(30, 160, 60, 170, 20.0)], spec)
    closed &= mixed.value_at(0, 0) == 17.5
    fine = Raster(spec, [[2.0, 4.0], [6.0, 8.0]])
    closed &= downscale_raster(fine, GridSpec(0.0, 300.0, 300.0, 1, 1)).value_at(0, 0) == 5.0
    mass = max(mass_error(s) for s in range(20))
    nest = max(downscale_composition_error(s) for s in range(20))
    elapsed = time.perf_counter() - t0
    ok = closed and mass < 1e-9 and nest < 1e-12
    verdict(8, "validator", ok, elapsed, 5.0,
            f"closed forms {'exact' if closed else 'wrong'}, mass rel err {mass:.1e}, "
            f"nested downscale rel err {nest:.1e}")


def test_criterion_09_northern_rule(verdict):
    t0 = time.perf_counter()
    part, samples = _northern_setup([100, 600, 700])
    chosen = northern_training_sets(samples, part, min_samples=1).sets[9]
    elapsed = time.perf_counter() - t0
    flags = [s in chosen for s in samples]
    verdict(9, "northern rule", flags == [True, True, False], elapsed, 1.0,
            f"100/600/700 km included: {flags}")


def test_criterion_10_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    codes = [main(["synth", "--seed", "10", "--size", "48", "--n-trees", "20", "--out", str(tmp_path / "in")])]
    for run in ("a", "b"):
        codes.append(main(["run", "--config", str(tmp_path / "in" / "config.json"),
                           "--out", str(tmp_path / run)]))
    identical = same_tree(tmp_path / "a", tmp_path / "b")
    elapsed = time.perf_counter() - t0
    verdict(10, "determinism", codes == [0, 0, 0] and identical, elapsed, 120.0,
            f"exit codes {codes}, output trees {'identical' if identical else 'differ'}")
