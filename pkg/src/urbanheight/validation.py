"""Accuracy metrics, reference rasterisation and product comparison."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Polygon, box

from .exceptions import GridMismatchError
from .raster import GridSpec, Raster

logger = logging.getLogger(__name__)

REPORT_FIELDS = ("stratum", "n", "r", "rmse")


def _paired(a, b):
    a = np.array([np.nan if v is None else v for v in a], dtype=np.float64)
    b = np.array([np.nan if v is None else v for v in b], dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    ok = np.isfinite(a) & np.isfinite(b)
    return a[ok], b[ok]


def pearson_r(a, b) -> float:
    """Product-moment correlation of the co-valid pairs.

    Returns NaN (undefined) when fewer than two pairs remain or either side
    has zero variance.
    """
    a, b = _paired(a, b)
    if a.size < 2:
        return math.nan
    da = a - a.mean()
    db = b - b.mean()
    saa = float(np.dot(da, da))
    sbb = float(np.dot(db, db))
    if saa == 0.0 or sbb == 0.0:
        return math.nan
    r = float(np.dot(da, db)) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


def rmse(pred, ref) -> float:
    p, r = _paired(pred, ref)
    if p.size == 0:
        return math.nan
    d = p - r
    out = math.sqrt(float(np.dot(d, d)) / d.size)
    if out == 0.0 or not math.isfinite(out):
        # squares under- or overflowed; rescale by the largest gap
        m = float(np.max(np.abs(d)))
        if m == 0.0 or not math.isfinite(m):
            return m
        out = m * math.sqrt(float(np.dot(d / m, d / m)) / d.size)
    return out


@dataclass(frozen=True)
class ValidationReport:
    stratum: str
    n: int
    pearson_r: float
    rmse: float

    @classmethod
    def from_pairs(cls, stratum, pred, ref) -> "ValidationReport":
        p, r = _paired(pred, ref)
        if p.size == 0:
            return cls(str(stratum), 0, math.nan, math.nan)
        return cls(str(stratum), int(p.size), pearson_r(p, r), rmse(p, r))


def _fmt(v: float) -> str:
    return "NA" if v is None or not math.isfinite(v) else repr(float(v))


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for rep in reports:
            w.writerow([rep.stratum, rep.n, _fmt(rep.pearson_r), _fmt(rep.rmse)])


def read_reports_csv(path) -> list[ValidationReport]:
    def num(s):
        return math.nan if s == "NA" else float(s)

    with open(path, newline="", encoding="utf-8") as fh:
        return [ValidationReport(r["stratum"], int(r["n"]), num(r["r"]), num(r["rmse"]))
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# vector reference
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BuildingPolygon:
    footprint: Polygon
    height: float

    @classmethod
    def rectangle(cls, min_x, min_y, max_x, max_y, height) -> "BuildingPolygon":
        return cls(box(min_x, min_y, max_x, max_y), float(height))

    @property
    def area(self) -> float:
        return float(self.footprint.area)

    def axis_aligned_bounds(self):
        """Bounds if the footprint is an axis-aligned rectangle, else ``None``."""
        g = self.footprint
        if len(g.interiors) or len(g.exterior.coords) != 5:
            return None
        x0, y0, x1, y1 = g.bounds
        for x, y in g.exterior.coords:
            if x not in (x0, x1) or y not in (y0, y1):
                return None
        return x0, y0, x1, y1


def _overlaps_1d(lo, hi, edges):
    """Length of [lo, hi] inside each interval [edges[k], edges[k+1]]."""
    return np.clip(np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1]), 0.0, None)


def _accumulate(polys, spec: GridSpec):
    """Per-cell sums of ``height * area`` and ``area``, plus the degenerate count.

    Axis-aligned rectangles are clipped with exact interval arithmetic; other
    polygons go through shapely intersections.
    """
    n_rows, n_cols = spec.shape
    cs = spec.cell_size
    x_edges = spec.origin_x + cs * np.arange(n_cols + 1)
    y_edges = spec.origin_y - cs * np.arange(n_rows + 1)  # descending
    weighted = np.zeros(spec.shape)
    area = np.zeros(spec.shape)
    skipped = 0
    for bp in polys:
        if not (bp.area > 0):
            skipped += 1
            continue
        x0, y0, x1, y1 = bp.footprint.bounds
        c_lo = max(0, int(math.floor((x0 - spec.origin_x) / cs)))
        c_hi = min(n_cols, int(math.floor((x1 - spec.origin_x) / cs)) + 1)
        r_lo = max(0, int(math.floor((spec.origin_y - y1) / cs)))
        r_hi = min(n_rows, int(math.floor((spec.origin_y - y0) / cs)) + 1)
        if c_lo >= c_hi or r_lo >= r_hi:
            continue
        rect = bp.axis_aligned_bounds()
        if rect is not None:
            wx = _overlaps_1d(x0, x1, x_edges[c_lo:c_hi + 1])
            # rows: cell k spans [y_edges[k+1], y_edges[k]]
            ye = y_edges[r_lo:r_hi + 1]
            wy = np.clip(np.minimum(y1, ye[:-1]) - np.maximum(y0, ye[1:]), 0.0, None)
            a = np.outer(wy, wx)
        else:
            rr, cc = np.meshgrid(np.arange(r_lo, r_hi), np.arange(c_lo, c_hi), indexing="ij")
            cells = shapely.box(x_edges[cc], y_edges[rr + 1], x_edges[cc + 1], y_edges[rr])
            a = shapely.area(shapely.intersection(bp.footprint, cells))
        weighted[r_lo:r_hi, c_lo:c_hi] += a * bp.height
        area[r_lo:r_hi, c_lo:c_hi] += a
    return weighted, area, skipped


def area_weighted_reference(polys, spec: GridSpec, nodata=None, tally: Counter | None = None) -> Raster:
    """Per-cell mean building height weighted by each building's area inside the cell.

    Cells with no building area are nodata. Zero-area polygons are skipped,
    logged and counted under ``degenerate_polygons``.
    """
    weighted, area, skipped = _accumulate(polys, spec)
    if skipped:
        logger.warning("skipped %d zero-area reference polygon(s)", skipped)
        if tally is not None:
            tally["degenerate_polygons"] += skipped
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(area > 0, weighted / area, np.nan)
    kwargs = {} if nodata is None else {"nodata": nodata}
    return Raster.from_masked(spec, out, **kwargs)


def building_area_per_cell(polys, spec: GridSpec) -> np.ndarray:
    """Total building area inside each cell."""
    return _accumulate(polys, spec)[1]


REFERENCE_FIELDS = ("min_x", "min_y", "max_x", "max_y", "height")


def read_reference_csv(path) -> list[BuildingPolygon]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, rec in enumerate(reader, start=2):
            h = float(rec["height"])
            wkt = (rec.get("wkt") or "").strip()
            if wkt:
                geom = shapely.from_wkt(wkt)
                if not isinstance(geom, Polygon):
                    raise ValueError(f"{path}:{lineno}: WKT must be a POLYGON")
                out.append(BuildingPolygon(geom, h))
            else:
                out.append(BuildingPolygon.rectangle(float(rec["min_x"]), float(rec["min_y"]),
                                                     float(rec["max_x"]), float(rec["max_y"]), h))
    return out


def write_reference_csv(polys, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REFERENCE_FIELDS + ("wkt",))
        for bp in polys:
            rect = bp.axis_aligned_bounds()
            if rect is not None:
                w.writerow([repr(float(v)) for v in rect] + [repr(bp.height), ""])
            else:
                w.writerow(["", "", "", "", repr(bp.height), bp.footprint.wkt])


# ---------------------------------------------------------------------------
# raster reference
# ---------------------------------------------------------------------------


def _integer_ratio(a: float, b: float, what: str) -> int:
    k = a / b
    n = int(round(k))
    if abs(k - n) > 1e-9 * max(1.0, abs(k)):
        raise GridMismatchError(f"{what} is not an integer multiple ({k})")
    return n


def downscale_raster(fine: Raster, coarse_spec: GridSpec, nodata=None) -> Raster:
    """Aggregate to a coarser aligned grid by the mean of valid fine pixels."""
    fs = fine.spec
    factor = _integer_ratio(coarse_spec.cell_size, fs.cell_size, "coarse cell size")
    if factor < 1:
        raise GridMismatchError("target grid is finer than the source")
    col_off = _integer_ratio(coarse_spec.origin_x - fs.origin_x, fs.cell_size, "x origin offset")
    row_off = _integer_ratio(fs.origin_y - coarse_spec.origin_y, fs.cell_size, "y origin offset")
    n_r, n_c = coarse_spec.n_rows * factor, coarse_spec.n_cols * factor
    data = fine.masked()
    padded = np.full((n_r, n_c), np.nan)
    # fine rows/cols covered by the coarse extent
    r0, c0 = row_off, col_off
    src_r = np.arange(n_r) + r0
    src_c = np.arange(n_c) + c0
    ok_r = (src_r >= 0) & (src_r < fs.n_rows)
    ok_c = (src_c >= 0) & (src_c < fs.n_cols)
    padded[np.ix_(ok_r, ok_c)] = data[np.ix_(src_r[ok_r], src_c[ok_c])]
    blocks = padded.reshape(coarse_spec.n_rows, factor, coarse_spec.n_cols, factor)
    valid = np.isfinite(blocks)
    count = valid.sum(axis=(1, 3))
    total = np.where(valid, blocks, 0.0).sum(axis=(1, 3))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(count > 0, total / count, np.nan)
    return Raster.from_masked(coarse_spec, out, fine.nodata if nodata is None else nodata)


# ---------------------------------------------------------------------------
# product comparison
# ---------------------------------------------------------------------------


def compare_products(a: Raster, b: Raster, mask: Raster | None = None, strata: Raster | None = None):
    """Per-stratum and overall agreement of two products on one grid.

    Returns ``(reports, difference)``; the difference raster is ``a - b``
    with nodata wherever either side is nodata. The overall report comes
    first, labelled ``all``, then strata in ascending id order.
    """
    spec = a.spec
    spec.check_compatible(b.spec, "compared products")
    av, bv = a.masked(), b.masked()
    diff = Raster.from_masked(spec, av - bv, a.nodata)
    use = np.isfinite(av) & np.isfinite(bv)
    if mask is not None:
        spec.check_compatible(mask.spec, "products and mask")
        use &= mask.valid & (mask.values == 1)
    reports = [ValidationReport.from_pairs("all", av[use], bv[use])]
    if strata is not None:
        spec.check_compatible(strata.spec, "products and strata")
        sv = strata.values
        ids = np.unique(sv[strata.valid])
        for sid in ids:
            sel = strata.valid & (sv == sid)
            label = str(int(sid)) if float(sid).is_integer() else repr(float(sid))
            reports.append(ValidationReport.from_pairs(label, av[sel & use], bv[sel & use]))
    return reports, diff
