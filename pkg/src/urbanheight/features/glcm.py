"""Sliding-window GLCM texture measures.

For every output pixel a symmetric co-occurrence matrix is accumulated over
distance-1 pairs in four directions inside the window, each direction is
normalised on its own, and the four matrices are averaged. Because all four
measures are linear in the matrix entries, they reduce to window sums of
per-pair quantities, which are evaluated with summed-area tables instead of
building explicit matrices.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError

DEFAULT_LEVELS = 32
TEXTURES = ("glcmmean", "glcmvar", "contrast", "dissim")
# (row, col) neighbour offsets for 0, 45, 90 and 135 degrees
DIRECTIONS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))


def quantize(band, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Global min-max linear binning to ``0..levels-1``; -1 marks invalid pixels."""
    if levels < 2:
        raise ConfigError(f"GLCM needs at least 2 gray levels, got {levels}")
    band = np.asarray(band, dtype=np.float64)
    valid = np.isfinite(band)
    q = np.full(band.shape, -1, dtype=np.int64)
    if not valid.any():
        return q
    lo = band[valid].min()
    hi = band[valid].max()
    if hi == lo:
        q[valid] = 0
        return q
    scaled = np.floor((band[valid] - lo) / (hi - lo) * levels)
    q[valid] = np.clip(scaled, 0, levels - 1).astype(np.int64)
    return q


def window_anchor(window: int) -> int:
    """Offset of the target pixel from the window's top/left edge."""
    return (window + 1) // 2 - 1


def _integral(a):
    s = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=s[1:, 1:])
    return s


def _rect_sums(S, r0, r1, c0, c1):
    """Inclusive rectangle sums for arrays of bounds; empty rectangles give 0."""
    n_rows, n_cols = S.shape[0] - 1, S.shape[1] - 1
    r0 = np.clip(r0, 0, n_rows)
    c0 = np.clip(c0, 0, n_cols)
    r1 = np.clip(r1 + 1, 0, n_rows)
    c1 = np.clip(c1 + 1, 0, n_cols)
    r1 = np.maximum(r1, r0)
    c1 = np.maximum(c1, c0)
    return S[r1, c1] - S[r0, c1] - S[r1, c0] + S[r0, c0]


def glcm_from_quantized(q: np.ndarray, window: int, directions=DIRECTIONS):
    """Texture arrays ``(glcm_mean, glcm_variance, contrast, dissimilarity)`` from gray levels.

    ``q`` holds gray levels with -1 for invalid pixels. Output is NaN where the
    target pixel is invalid or its window holds no valid pair. Directions
    without a pair inside the window are left out of the average.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    q = np.asarray(q)
    n_rows, n_cols = q.shape
    a = window_anchor(window)
    rows, cols = np.indices(q.shape)
    wr0, wc0 = rows - a, cols - a
    wr1, wc1 = wr0 + window - 1, wc0 + window - 1

    valid = q >= 0
    qf = q.astype(np.float64)
    n_dirs = np.zeros(q.shape, dtype=np.float64)
    acc_mean = np.zeros(q.shape)
    acc_m2 = np.zeros(q.shape)
    acc_con = np.zeros(q.shape)
    acc_dis = np.zeros(q.shape)
    for dr, dc in directions:
        # pair anchored at (i, j) with partner (i + dr, j + dc)
        pr = np.arange(n_rows) + dr
        pc = np.arange(n_cols) + dc
        in_r = (pr >= 0) & (pr < n_rows)
        in_c = (pc >= 0) & (pc < n_cols)
        partner = np.full(q.shape, -1, dtype=np.int64)
        partner[np.ix_(in_r, in_c)] = q[np.ix_(pr[in_r], pc[in_c])]
        ok = valid & (partner >= 0)
        x = np.where(ok, qf, 0.0)
        y = np.where(ok, partner.astype(np.float64), 0.0)
        bounds = (wr0 + max(0, -dr), wr1 - max(0, dr), wc0 + max(0, -dc), wc1 - max(0, dc))
        count = _rect_sums(_integral(ok.astype(np.float64)), *bounds)
        s1 = _rect_sums(_integral(x + y), *bounds)
        s2 = _rect_sums(_integral(x * x + y * y), *bounds)
        d = x - y
        sd2 = _rect_sums(_integral(d * d), *bounds)
        sd1 = _rect_sums(_integral(np.abs(d)), *bounds)
        has = count > 0
        den = np.where(has, count, 1.0)
        n_dirs += has
        # each pair enters the symmetric matrix twice, hence the 2 * count
        acc_mean += np.where(has, s1 / (2.0 * den), 0.0)
        acc_m2 += np.where(has, s2 / (2.0 * den), 0.0)
        acc_con += np.where(has, sd2 / den, 0.0)
        acc_dis += np.where(has, sd1 / den, 0.0)

    defined = valid & (n_dirs > 0)
    nd = np.where(defined, n_dirs, 1.0)
    mean = acc_mean / nd
    var = np.maximum(acc_m2 / nd - mean * mean, 0.0)
    con = acc_con / nd
    dis = acc_dis / nd
    nan = np.nan
    return (np.where(defined, mean, nan), np.where(defined, var, nan),
            np.where(defined, con, nan), np.where(defined, dis, nan))


def glcm_features(band, window: int, levels: int = DEFAULT_LEVELS, directions=DIRECTIONS):
    """Quantize a band (NaN = nodata) and return its four texture arrays.

    Returns ``(glcm_mean, glcm_variance, contrast, dissimilarity)``.
    """
    return glcm_from_quantized(quantize(band, levels), window, directions)
