"""Compiled kernels for variance-reduction regression trees.

Trees are stored as parallel arrays indexed by node id; ``feature == -1``
marks a leaf. Node ids are assigned in creation order, the root is 0.
"""

import numpy as np
from numba import njit

LEAF = -1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@njit(cache=True, nogil=True)
def _splitmix(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def _randbelow(state, k):
    return np.int64(_splitmix(state) % np.uint64(k))


@njit(cache=True, nogil=True)
def _draw_features(state, perm, mtry):
    # partial Fisher-Yates over the persistent permutation buffer
    p = perm.shape[0]
    for i in range(mtry):
        j = i + _randbelow(state, p - i)
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp
    chosen = np.sort(perm[:mtry].copy())
    return chosen


@njit(cache=True, nogil=True)
def _insertion_sort(keys, vals, lo, hi):
    for i in range(lo + 1, hi):
        k = keys[i]
        v = vals[i]
        j = i - 1
        while j >= lo and keys[j] > k:
            keys[j + 1] = keys[j]
            vals[j + 1] = vals[j]
            j -= 1
        keys[j + 1] = k
        vals[j + 1] = v


@njit(cache=True, nogil=True)
def _cosort(keys, vals, n, stack):
    """Sort ``keys[:n]`` ascending in place, permuting ``vals`` alongside.

    Quicksort with median-of-three pivots and an insertion-sort cutoff;
    ``stack`` is scratch space of at least ``2 * (log2(n) + 2)`` entries.
    """
    top = 0
    stack[0] = 0
    stack[1] = n
    top = 2
    while top > 0:
        top -= 2
        lo = stack[top]
        hi = stack[top + 1]
        while hi - lo > 16:
            mid = (lo + hi - 1) // 2
            a = keys[lo]
            b = keys[mid]
            c = keys[hi - 1]
            if a < b:
                if b < c:
                    pivot = b
                elif a < c:
                    pivot = c
                else:
                    pivot = a
            else:
                if a < c:
                    pivot = a
                elif b < c:
                    pivot = c
                else:
                    pivot = b
            i = lo
            j = hi - 1
            while i <= j:
                while keys[i] < pivot:
                    i += 1
                while keys[j] > pivot:
                    j -= 1
                if i <= j:
                    tk = keys[i]
                    keys[i] = keys[j]
                    keys[j] = tk
                    tv = vals[i]
                    vals[i] = vals[j]
                    vals[j] = tv
                    i += 1
                    j -= 1
            # recurse into the smaller part first to bound the stack
            if j + 1 - lo < hi - i:
                stack[top] = i
                stack[top + 1] = hi
                top += 2
                hi = j + 1
            else:
                stack[top] = lo
                stack[top + 1] = j + 1
                top += 2
                lo = i
        _insertion_sort(keys, vals, lo, hi)


@njit(cache=True, nogil=True)
def grow_tree(XT, y, rows, mtry, min_node, seed):
    """Grow one tree on ``rows`` (indices into X, duplicates allowed).

    ``XT`` is the transposed feature matrix ``(n_features, n_rows)`` so that
    one feature's values are contiguous.

    Returns ``(feature, threshold, left, right, value, n_nodes)``; only the
    first ``n_nodes`` entries of each array are meaningful.
    """
    n = rows.shape[0]
    p = XT.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)

    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed)
    perm = np.arange(p)
    idx = rows.copy()
    buf = np.empty(n, dtype=np.int64)
    xs = np.empty(n, dtype=np.float64)
    ys = np.empty(n, dtype=np.float64)
    yc = np.empty(n, dtype=np.float64)
    qstack = np.empty(256, dtype=np.int64)

    # explicit DFS stack of (node, start, end)
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        m = hi - lo

        total = 0.0
        y0 = y[idx[lo]]
        constant = True
        for k in range(lo, hi):
            v = y[idx[k]]
            total += v
            if v != y0:
                constant = False
        mean = total / m
        value[node] = mean
        if m <= min_node or constant:
            continue

        sum_all = 0.0
        ss_all = 0.0
        for k in range(m):
            yc[k] = y[idx[lo + k]] - mean
            sum_all += yc[k]
            ss_all += yc[k] * yc[k]
        # scores closer than this count as ties, so the same partition found
        # through two features goes to the lower index whatever the rounding
        tie = 1e-12 * ss_all

        chosen = _draw_features(state, perm, mtry)
        best_score = -np.inf
        best_f = -1
        best_t = 0.0
        for fi in range(chosen.shape[0]):
            f = chosen[fi]
            for k in range(m):
                xs[k] = XT[f, idx[lo + k]]
                ys[k] = yc[k]
            _cosort(xs, ys, m, qstack)
            s_left = 0.0
            for k in range(m - 1):
                s_left += ys[k]
                a = xs[k]
                b = xs[k + 1]
                if a == b:
                    continue
                n_l = k + 1
                n_r = m - n_l
                s_right = sum_all - s_left
                score = s_left * s_left / n_l + s_right * s_right / n_r
                if best_f < 0 or score > best_score + tie:
                    best_score = score
                    best_f = f
                    t = 0.5 * (a + b)
                    if t >= b:
                        t = a
                    best_t = t

        if best_f < 0:
            continue

        # stable partition of idx[lo:hi]
        n_l = 0
        for k in range(lo, hi):
            if XT[best_f, idx[k]] <= best_t:
                buf[n_l] = idx[k]
                n_l += 1
        n_r = 0
        for k in range(lo, hi):
            if XT[best_f, idx[k]] > best_t:
                buf[n_l + n_r] = idx[k]
                n_r += 1
        for k in range(m):
            idx[lo + k] = buf[k]

        l_id = n_nodes
        r_id = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = l_id
        right[node] = r_id
        # push right first so the left subtree is processed first
        st_node[top] = r_id
        st_lo[top] = lo + n_l
        st_hi[top] = hi
        top += 1
        st_node[top] = l_id
        st_lo[top] = lo
        st_hi[top] = lo + n_l
        top += 1

    return feature, threshold, left, right, value, n_nodes


@njit(cache=True, nogil=True)
def predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0], dtype=np.float64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] != LEAF:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True, nogil=True)
def predict_tree_rows(X, rows, col, replacement, feature, threshold, left, right, value):
    """Predict selected rows, reading feature ``col`` from ``replacement`` (col < 0: no override)."""
    out = np.empty(rows.shape[0], dtype=np.float64)
    for i in range(rows.shape[0]):
        r = rows[i]
        node = 0
        while feature[node] != LEAF:
            f = feature[node]
            if f == col:
                v = replacement[i]
            else:
                v = X[r, f]
            if v <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out
