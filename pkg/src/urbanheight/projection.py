"""Spherical Mollweide (equal-area) projection, central meridian 0.

Both scalar and array entry points are provided. The array versions are what
the pipeline uses for footprint batches; the scalar ones are thin wrappers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, ProjectionDomainError

DEFAULT_RADIUS = 6378137.0
MAX_ITER = 50
_HALF_PI = math.pi / 2
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class GeoPoint:
    """Geographic position in decimal degrees."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0) or math.isnan(self.lon):
            raise ValueError(f"longitude out of range: {self.lon}")
        if not (-90.0 <= self.lat <= 90.0) or math.isnan(self.lat):
            raise ValueError(f"latitude out of range: {self.lat}")


def _x_minus_sin(x):
    """``x - sin(x)`` for ``x >= 0`` without cancellation near zero."""
    x = np.asarray(x, dtype=np.float64)
    x2 = x * x
    # Taylor series, enough terms for double precision on [0, 1]
    series = 1.0 / 355687428096000.0
    for k in (17, 15, 13, 11, 9, 7, 5):
        series = 1.0 / math.factorial(k) - x2 * series
    series = x2 * x * (1.0 / 6.0 - x2 * series)
    return np.where(x <= 1.0, series, x - np.sin(x))


def _solve_increasing(F, dF, target, x0, hi):
    """Solve ``F(t) = target`` on ``[0, hi]`` for increasing ``F``.

    Newton steps guarded by a shrinking bracket; a step that leaves the
    bracket, or lands where the derivative vanishes, is replaced by
    bisection. Iterates down to rounding level.
    """
    lo = np.zeros_like(target)
    hi = np.full_like(target, hi)
    t = np.clip(x0, lo, hi)
    done = target == 0.0
    t[done] = 0.0
    tol = 4 * np.spacing(np.maximum(np.abs(target), 1e-300))
    for _ in range(MAX_ITER):
        active = ~done
        if not active.any():
            return t
        ta = t[active]
        f = F(ta) - target[active]
        fp = dF(ta)
        with np.errstate(divide="ignore", invalid="ignore"):
            converged = (np.abs(f) <= tol[active]) | (np.abs(f / fp) <= 4 * np.spacing(ta))
            newton = ta - f / fp
        a_lo = np.where(f < 0, ta, lo[active])
        a_hi = np.where(f > 0, ta, hi[active])
        ok = (fp > 0) & (newton > a_lo) & (newton < a_hi)
        step = np.where(converged, ta, np.where(ok, newton, 0.5 * (a_lo + a_hi)))
        # bracket collapsed to adjacent floats: nothing left to gain
        stalled = (a_hi - a_lo) <= 4 * np.spacing(np.maximum(a_hi, 1e-300))
        lo[active], hi[active] = a_lo, a_hi
        t[active] = step
        idx = np.flatnonzero(active)
        done[idx[converged | stalled]] = True
    left = ~done
    if left.any() and np.any(np.abs(F(t[left]) - target[left]) >= 1e-12):
        raise ConvergenceError(f"auxiliary angle did not converge in {MAX_ITER} iterations")
    return t


def _aux_angle(abs_lat, colat):
    """``(theta, sin theta, cos theta)`` for ``|lat|`` given with its complement.

    Above 45 degrees the equation is solved for ``u = pi/2 - theta`` in the
    form ``2u - sin 2u = pi (1 - sin lat)``; near the poles that keeps
    ``cos theta`` (and so x) accurate to the last bits.
    """
    theta = np.empty_like(abs_lat)
    sin_t = np.empty_like(abs_lat)
    cos_t = np.empty_like(abs_lat)
    low = abs_lat <= math.pi / 4
    if low.any():
        a = abs_lat[low]
        t = _solve_increasing(lambda t: 2.0 * t + np.sin(2.0 * t), lambda t: 4.0 * np.cos(t) ** 2,
                              math.pi * np.sin(a), a, _HALF_PI)
        theta[low], sin_t[low], cos_t[low] = t, np.sin(t), np.cos(t)
    high = ~low
    if high.any():
        c = 2.0 * math.pi * np.sin(0.5 * colat[high]) ** 2
        u = _solve_increasing(lambda u: _x_minus_sin(2.0 * u), lambda u: 4.0 * np.sin(u) ** 2,
                              c, np.cbrt(0.75 * c), _HALF_PI)
        theta[high], sin_t[high], cos_t[high] = _HALF_PI - u, np.cos(u), np.sin(u)
    return theta, sin_t, cos_t


def solve_theta_array(lat):
    """Auxiliary angle for an array of latitudes (radians).

    Solves ``2t + sin(2t) = pi * sin(lat)``; the result lies in
    ``[-pi/2, pi/2]``.
    """
    lat = np.asarray(lat, dtype=np.float64)
    if np.any(np.abs(lat) > _HALF_PI) or np.any(np.isnan(lat)):
        raise ValueError("latitude must satisfy |lat| <= pi/2")
    a = np.abs(lat)
    theta, _, _ = _aux_angle(a, _HALF_PI - a)
    return np.sign(lat) * theta


def solve_theta(lat: float) -> float:
    """Auxiliary angle for a single latitude in radians."""
    return float(solve_theta_array(np.array([lat]))[0])


def forward_array(lon_deg, lat_deg, radius=DEFAULT_RADIUS):
    """Project degrees to Mollweide meters. Returns ``(x, y)`` arrays."""
    lon_deg, lat_deg = np.broadcast_arrays(np.asarray(lon_deg, dtype=np.float64),
                                           np.asarray(lat_deg, dtype=np.float64))
    if np.any(np.abs(lat_deg) > 90.0) or np.any(np.isnan(lat_deg)):
        raise ValueError("latitude must lie in [-90, 90] degrees")
    a = np.abs(lat_deg)
    _, sin_t, cos_t = _aux_angle(np.radians(a), np.radians(90.0 - a))
    x = radius * (2.0 * _SQRT2 / math.pi) * np.radians(lon_deg) * cos_t
    y = radius * _SQRT2 * np.sign(lat_deg) * sin_t
    return x, y


def inverse_array(x, y, radius=DEFAULT_RADIUS):
    """Unproject Mollweide meters to ``(lon, lat)`` degree arrays.

    Raises ProjectionDomainError for any point outside the projection ellipse.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
    s = y / (_SQRT2 * radius)
    tol = 1e-12
    if np.any(np.abs(s) > 1.0 + tol) or np.any(np.isnan(s)) or np.any(np.isnan(x)):
        raise ProjectionDomainError("y outside projection ellipse")
    a = np.minimum(np.abs(s), 1.0)
    lat = np.empty_like(a)
    cos_t = np.empty_like(a)
    low = a <= math.sqrt(0.5)
    t = np.arcsin(a[low])
    cos_t[low] = np.sqrt((1.0 - a[low]) * (1.0 + a[low]))
    lat[low] = np.degrees(np.arcsin(np.minimum((2.0 * t + np.sin(2.0 * t)) / math.pi, 1.0)))
    high = ~low
    u = 2.0 * np.arcsin(np.sqrt(0.5 * (1.0 - a[high])))
    cos_t[high] = np.sin(u)
    colat = 2.0 * np.arcsin(np.sqrt(np.minimum(_x_minus_sin(2.0 * u) / (2.0 * math.pi), 1.0)))
    lat[high] = 90.0 - np.degrees(colat)
    lat = np.sign(s) * lat
    with np.errstate(divide="ignore", invalid="ignore"):
        lon = np.where(cos_t > 0, math.pi * x / (2.0 * _SQRT2 * radius * cos_t), 0.0)
    if np.any((cos_t <= 0) & (np.abs(x) > 1e-9)):
        raise ProjectionDomainError("x outside projection ellipse at the pole")
    if np.any(np.abs(lon) > math.pi * (1.0 + tol)):
        raise ProjectionDomainError("x outside projection ellipse")
    lon = np.clip(lon, -math.pi, math.pi)
    return np.degrees(lon), lat


def mollweide_forward(p: GeoPoint, radius: float = DEFAULT_RADIUS) -> tuple[float, float]:
    x, y = forward_array(np.array([p.lon]), np.array([p.lat]), radius)
    return float(x[0]), float(y[0])


def mollweide_inverse(x: float, y: float, radius: float = DEFAULT_RADIUS) -> GeoPoint:
    lon, lat = inverse_array(np.array([x]), np.array([y]), radius)
    return GeoPoint(float(lon[0]), float(lat[0]))
