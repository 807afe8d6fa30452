"""Grid definitions and the single-band raster container."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import GridMismatchError
from .projection import DEFAULT_RADIUS

DEFAULT_NODATA = -9999.0


@dataclass(frozen=True)
class GridSpec:
    """Regular grid in projected meters, anchored at the upper-left corner."""

    origin_x: float
    origin_y: float
    cell_size: float
    n_rows: int
    n_cols: int
    sphere_radius: float = DEFAULT_RADIUS

    def __post_init__(self):
        if not (self.cell_size > 0) or not math.isfinite(self.cell_size):
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if int(self.n_rows) != self.n_rows or self.n_rows < 1:
            raise ValueError(f"n_rows must be a positive integer, got {self.n_rows}")
        if int(self.n_cols) != self.n_cols or self.n_cols < 1:
            raise ValueError(f"n_cols must be a positive integer, got {self.n_cols}")
        object.__setattr__(self, "n_rows", int(self.n_rows))
        object.__setattr__(self, "n_cols", int(self.n_cols))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def lower_left(self) -> tuple[float, float]:
        return self.origin_x, self.origin_y - self.n_rows * self.cell_size

    def compatible(self, other: "GridSpec") -> bool:
        return self == other

    def check_compatible(self, other: "GridSpec", what: str = "rasters") -> None:
        if self != other:
            raise GridMismatchError(f"incompatible grids for {what}: {self} vs {other}")

    def cell_of_point(self, x: float, y: float):
        return cell_of_point(x, y, self)

    def cells_of_points(self, x, y):
        """Vectorised cell lookup. Returns ``(rows, cols, inside)`` arrays."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        rows = np.floor((self.origin_y - y) / self.cell_size)
        cols = np.floor((x - self.origin_x) / self.cell_size)
        inside = (rows >= 0) & (rows < self.n_rows) & (cols >= 0) & (cols < self.n_cols)
        rows = np.where(inside, rows, -1).astype(np.int64)
        cols = np.where(inside, cols, -1).astype(np.int64)
        return rows, cols, inside

    def cell_center(self, row, col):
        """Projected coordinates of cell centers (works on arrays)."""
        x = self.origin_x + (np.asarray(col) + 0.5) * self.cell_size
        y = self.origin_y - (np.asarray(row) + 0.5) * self.cell_size
        return x, y

    def cell_centers(self):
        """``(x, y)`` arrays of shape ``(n_rows, n_cols)``."""
        rows, cols = np.indices(self.shape)
        return self.cell_center(rows, cols)


def cell_of_point(x: float, y: float, spec: GridSpec):
    """Return ``(row, col)`` of the half-open cell holding ``(x, y)`` or ``None``."""
    row = math.floor((spec.origin_y - y) / spec.cell_size)
    col = math.floor((x - spec.origin_x) / spec.cell_size)
    if 0 <= row < spec.n_rows and 0 <= col < spec.n_cols:
        return row, col
    return None


class Raster:
    """Single-band value plane on a GridSpec.

    ``values`` is a ``(n_rows, n_cols)`` float64 array in which invalid cells
    hold the ``nodata`` sentinel. Non-finite values are treated as nodata too.
    Rasters are treated as immutable; the arrays are marked read-only.
    """

    __slots__ = ("spec", "values", "nodata")

    def __init__(self, spec: GridSpec, values, nodata: float = DEFAULT_NODATA):
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 1:
            if arr.size != spec.n_rows * spec.n_cols:
                raise ValueError(
                    f"expected {spec.n_rows * spec.n_cols} values, got {arr.size}"
                )
            arr = arr.reshape(spec.shape)
        if arr.shape != spec.shape:
            raise ValueError(f"values shape {arr.shape} does not match grid {spec.shape}")
        arr.setflags(write=False)
        self.spec = spec
        self.values = arr
        self.nodata = float(nodata)

    @classmethod
    def from_masked(cls, spec: GridSpec, data, nodata: float = DEFAULT_NODATA) -> "Raster":
        """Build from an array where NaN marks invalid cells."""
        data = np.asarray(data, dtype=np.float64)
        return cls(spec, np.where(np.isfinite(data), data, nodata), nodata)

    @classmethod
    def full(cls, spec: GridSpec, value: float, nodata: float = DEFAULT_NODATA) -> "Raster":
        return cls(spec, np.full(spec.shape, value, dtype=np.float64), nodata)

    @property
    def valid(self) -> np.ndarray:
        v = self.values
        return np.isfinite(v) & (v != self.nodata)

    def masked(self) -> np.ndarray:
        """Float copy with NaN in every invalid cell."""
        return np.where(self.valid, self.values, np.nan)

    def value_at(self, row: int, col: int):
        """Cell value, or ``None`` when the cell is nodata."""
        v = self.values[row, col]
        if not math.isfinite(v) or v == self.nodata:
            return None
        return float(v)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.nodata == other.nodata
            and np.array_equal(self.masked(), other.masked(), equal_nan=True)
        )

    def __repr__(self):
        return f"Raster({self.spec.n_rows}x{self.spec.n_cols}, cell={self.spec.cell_size}, nodata={self.nodata})"
