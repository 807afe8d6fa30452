"""Per-pixel multitemporal statistics over a stack of observations."""

from __future__ import annotations

import numpy as np

OPTICAL_STATS = ("mean", "var", "p10", "p25", "p90")
RADAR_STATS = ("mean", "var", "p0", "p10", "p25", "p90", "p100")

_PERCENTILES = {"p0": 0.0, "p10": 0.1, "p25": 0.25, "p90": 0.9, "p100": 1.0}


def percentile_fraction(stat: str) -> float:
    try:
        return _PERCENTILES[stat]
    except KeyError:
        raise ValueError(f"unknown percentile stat {stat!r}") from None


def temporal_stats_cube(cube, stats=OPTICAL_STATS) -> dict:
    """Statistics along axis 0 of a ``(T, ...)`` array; NaN marks a missing observation.

    Sums run over the sorted valid values, which makes every statistic exactly
    invariant to the order of the observations. Percentiles interpolate
    linearly at rank ``p * (n - 1)``; variance uses the ``n`` divisor. Pixels
    with no valid observation get NaN for every statistic.
    """
    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim == 0:
        raise ValueError("need at least one axis of observations")
    ordered = np.sort(cube, axis=0)  # NaN sorts last
    valid = ~np.isnan(ordered)
    n = valid.sum(axis=0)
    empty = n == 0
    safe_n = np.where(empty, 1, n)

    need_moments = "mean" in stats or "var" in stats
    if need_moments:
        total = np.zeros(cube.shape[1:], dtype=np.float64)
        for t in range(ordered.shape[0]):
            total = total + np.where(valid[t], ordered[t], 0.0)
        mean = total / safe_n

    out = {}
    for stat in stats:
        if stat == "mean":
            res = mean.copy()
        elif stat == "var":
            ss = np.zeros_like(mean)
            for t in range(ordered.shape[0]):
                d = ordered[t] - mean
                ss = ss + np.where(valid[t], d * d, 0.0)
            res = ss / safe_n
        else:
            q = percentile_fraction(stat)
            rank = q * (safe_n - 1)
            lo = np.floor(rank).astype(np.int64)
            frac = rank - lo
            hi = np.minimum(lo + 1, safe_n - 1)
            v_lo = np.take_along_axis(ordered, lo[None, ...], axis=0)[0]
            v_hi = np.take_along_axis(ordered, hi[None, ...], axis=0)[0]
            # the clamp keeps rounding from pushing a value past its upper neighbour
            res = np.minimum(v_lo + (v_hi - v_lo) * frac, v_hi)
        res = np.where(empty, np.nan, res)
        out[stat] = res
    return out


def temporal_stats(series, stats=OPTICAL_STATS) -> dict:
    """Statistics of one pixel's observations; ``None``/NaN entries are skipped.

    Returns a dict of floats, NaN everywhere when nothing is valid.
    """
    vals = np.array([np.nan if v is None else v for v in series], dtype=np.float64)
    if vals.size == 0:
        return {s: float("nan") for s in stats}
    res = temporal_stats_cube(vals[:, None], stats)
    return {k: float(v[0]) for k, v in res.items()}
