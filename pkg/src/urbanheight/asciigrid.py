"""ESRI-style ASCII grid reader/writer.

Header keys are written in the fixed order NCOLS, NROWS, XLLCORNER,
YLLCORNER, CELLSIZE, NODATA_VALUE, then one text line per row, top row
first. Numbers use Python's shortest round-trip repr, so a write/read cycle
reproduces every finite float bit-for-bit. The header stores the lower-left
corner; it is written and read back with exact decimal arithmetic so the
upper-left origin survives the trip unchanged.
"""

from __future__ import annotations

import decimal
import os

import numpy as np

from .exceptions import HeaderError, NumberParseError, ValueCountError
from .projection import DEFAULT_RADIUS
from .raster import GridSpec, Raster

HEADER_KEYS = ("NCOLS", "NROWS", "XLLCORNER", "YLLCORNER", "CELLSIZE", "NODATA_VALUE")


def format_number(v: float) -> str:
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s


# wide enough to add any two doubles without rounding
_EXACT = decimal.Context(prec=800)


def _decimal_text(d: decimal.Decimal) -> str:
    s = str(d)
    if "." in s and "E" not in s:
        s = s.rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def _lower_left_y(spec: GridSpec) -> str:
    span = _EXACT.multiply(decimal.Decimal(spec.n_rows), decimal.Decimal(format_number(spec.cell_size)))
    return _decimal_text(_EXACT.subtract(decimal.Decimal(format_number(spec.origin_y)), span))


def _origin_y(yll_tok: str, n_rows: int, cs_tok: str) -> float:
    span = _EXACT.multiply(decimal.Decimal(n_rows), decimal.Decimal(cs_tok))
    return float(_EXACT.add(decimal.Decimal(yll_tok), span))


def write_ascii_grid(r: Raster, path) -> None:
    spec = r.spec
    nodata_tok = format_number(r.nodata)
    lines = [
        f"NCOLS {spec.n_cols}",
        f"NROWS {spec.n_rows}",
        f"XLLCORNER {format_number(spec.origin_x)}",
        f"YLLCORNER {_lower_left_y(spec)}",
        f"CELLSIZE {format_number(spec.cell_size)}",
        f"NODATA_VALUE {nodata_tok}",
    ]
    valid = r.valid
    for i in range(spec.n_rows):
        row = r.values[i]
        ok = valid[i]
        lines.append(" ".join(format_number(v) if ok[j] else nodata_tok for j, v in enumerate(row)))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def _parse_float(tok: str, line: int, path) -> float:
    try:
        return float(tok)
    except ValueError:
        raise NumberParseError(f"cannot parse number {tok!r}", line=line, path=path) from None


def read_ascii_grid(path, sphere_radius: float = DEFAULT_RADIUS) -> Raster:
    with open(path, encoding="ascii") as fh:
        text = fh.read()
    lines = text.splitlines()
    header = {}
    for k, key in enumerate(HEADER_KEYS):
        lineno = k + 1
        if k >= len(lines):
            raise HeaderError(f"missing header key {key}", line=lineno, path=path)
        parts = lines[k].split()
        if len(parts) != 2 or parts[0].upper() != key:
            raise HeaderError(
                f"expected '{key} <value>', got {lines[k]!r}", line=lineno, path=path
            )
        header[key] = (parts[1], lineno)

    def as_int(key):
        tok, ln = header[key]
        try:
            n = int(tok)
        except ValueError:
            raise HeaderError(f"{key} must be an integer, got {tok!r}", line=ln, path=path) from None
        if n < 1:
            raise HeaderError(f"{key} must be positive, got {n}", line=ln, path=path)
        return n

    ncols = as_int("NCOLS")
    nrows = as_int("NROWS")
    xll = _parse_float(*header["XLLCORNER"], path)
    _parse_float(*header["YLLCORNER"], path)  # validates the token
    cs = _parse_float(*header["CELLSIZE"], path)
    nodata = _parse_float(*header["NODATA_VALUE"], path)
    if not cs > 0:
        raise HeaderError("CELLSIZE must be positive", line=header["CELLSIZE"][1], path=path)

    values = np.empty((nrows, ncols), dtype=np.float64)
    body = [(i + len(HEADER_KEYS) + 1, ln) for i, ln in enumerate(lines[len(HEADER_KEYS):])]
    body = [(n, ln) for n, ln in body if ln.strip()]
    if len(body) != nrows:
        last = body[-1][0] if body else len(HEADER_KEYS)
        raise ValueCountError(f"expected {nrows} data rows, found {len(body)}", line=last, path=path)
    for i, (lineno, ln) in enumerate(body):
        toks = ln.split()
        if len(toks) != ncols:
            raise ValueCountError(f"expected {ncols} values, found {len(toks)}", line=lineno, path=path)
        try:
            values[i] = np.array(toks, dtype=np.float64)
        except ValueError:
            for tok in toks:
                _parse_float(tok, lineno, path)
            raise

    spec = GridSpec(xll, _origin_y(header["YLLCORNER"][0], nrows, header["CELLSIZE"][0]), cs, nrows, ncols,
                    sphere_radius)
    return Raster(spec, values, nodata)


def write_stack(names, rasters, directory, manifest="manifest.txt") -> None:
    """Write one grid per band plus a manifest with the band names in order."""
    os.makedirs(directory, exist_ok=True)
    for name, r in zip(names, rasters):
        write_ascii_grid(r, os.path.join(directory, f"{name}.asc"))
    with open(os.path.join(directory, manifest), "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(names) + "\n")


def read_stack(directory, manifest="manifest.txt", sphere_radius: float = DEFAULT_RADIUS):
    with open(os.path.join(directory, manifest), encoding="ascii") as fh:
        names = [ln.strip() for ln in fh if ln.strip()]
    rasters = [read_ascii_grid(os.path.join(directory, f"{n}.asc"), sphere_radius) for n in names]
    return names, rasters
