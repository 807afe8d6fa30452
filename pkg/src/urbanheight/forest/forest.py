"""Bagged regression-tree ensemble with a scikit-learn compatible surface."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..exceptions import PredictionError, TrainingError
from ._tree import LEAF, grow_tree, predict_tree, predict_tree_rows

MIN_TRAIN_ROWS = 10


@dataclass(frozen=True)
class Tree:
    """Node arrays of one fitted tree (``feature == -1`` marks a leaf)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def predict(self, X) -> np.ndarray:
        return predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature != LEAF])


@dataclass
class TrainSet:
    """Feature matrix and targets; rows with missing features are dropped on construction."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)
    dropped: int = 0

    @classmethod
    def from_rows(cls, X, y, feature_names=None) -> "TrainSet":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != y.shape[0]:
            raise TrainingError(f"X shape {X.shape} does not match y length {y.shape}")
        keep = np.isfinite(X).all(axis=1) & np.isfinite(y)
        names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(X.shape[1])]
        return cls(np.ascontiguousarray(X[keep]), y[keep].copy(), names, int((~keep).sum()))


def bootstrap_rows(seed: int, n: int, bootstrap: bool):
    """In-bag rows and the compiled-RNG seed for tree number ``seed`` offset."""
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, n, n) if bootstrap else np.arange(n, dtype=np.int64)
    tree_seed = int(rng.integers(0, 2**63 - 1))
    return rows.astype(np.int64), tree_seed


def _fit_one(XT, y, seed, n, bootstrap, mtry, min_node):
    rows, tree_seed = bootstrap_rows(seed, n, bootstrap)
    f, t, l, r, v, k = grow_tree(XT, y, rows, mtry, min_node, tree_seed)
    return Tree(f[:k].copy(), t[:k].copy(), l[:k].copy(), r[:k].copy(), v[:k].copy())


class ForestRegressor(RegressorMixin, BaseEstimator):
    """Random forest regressor grown from scratch.

    Each tree sees a bootstrap sample of size n drawn with its own seed
    ``random_state + i``; each node draws ``mtry`` candidate features without
    replacement and takes the split that most reduces the children's summed
    squared error. Candidate thresholds are midpoints between consecutive
    distinct values. Ties go to the lower feature index, then the lower
    threshold. Nodes with ``min_node`` rows or fewer, or with constant
    targets, become leaves.

    Parameters
    ----------
    n_trees : int, default=500
    mtry : int or None, default=None
        Features tried per split; None means ``max(1, n_features // 3)``.
    min_node : int, default=5
    bootstrap : bool, default=True
    random_state : int
        Required; fixes every random draw.
    n_jobs : int, default=1
        Worker threads for tree growth. Results do not depend on it.
    subregion_id : int or None
        Zone this model serves; carried through serialisation.
    """

    def __init__(self, n_trees=500, mtry=None, min_node=5, bootstrap=True, random_state=None,
                 n_jobs=1, subregion_id=None):
        self.n_trees = n_trees
        self.mtry = mtry
        self.min_node = min_node
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.subregion_id = subregion_id

    def _resolved_mtry(self, p):
        if self.mtry is None:
            return max(1, p // 3)
        m = int(self.mtry)
        if not 1 <= m <= p:
            raise TrainingError(f"mtry must lie in [1, {p}], got {m}")
        return m

    def fit(self, X, y, feature_names=None):
        if self.random_state is None:
            raise TrainingError("random_state (seed) is required")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] == 0:
            raise TrainingError("X must be a 2-D matrix with at least one feature")
        if not np.isfinite(X).all():
            raise TrainingError("X contains nodata; drop those rows before training")
        X = check_array(X, dtype=np.float64, ensure_min_samples=1, order="C")
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.shape[0] != X.shape[0] or not np.isfinite(y).all():
            raise TrainingError("y must be finite with one value per row")
        n, p = X.shape
        if n < MIN_TRAIN_ROWS:
            raise TrainingError(f"need at least {MIN_TRAIN_ROWS} rows, got {n}")
        if int(self.n_trees) < 1:
            raise TrainingError("n_trees must be >= 1")
        if int(self.min_node) < 1:
            raise TrainingError("min_node must be >= 1")
        mtry = self._resolved_mtry(p)
        seed = int(self.random_state)
        XT = np.ascontiguousarray(X.T)
        args = [(XT, y, seed + i, n, bool(self.bootstrap), mtry, int(self.min_node))
                for i in range(int(self.n_trees))]
        if self.n_jobs in (None, 1):
            self.trees_ = [_fit_one(*a) for a in args]
        else:
            # kernels release the GIL, so threads run trees concurrently
            self.trees_ = Parallel(n_jobs=self.n_jobs, prefer="threads")(delayed(_fit_one)(*a) for a in args)
        self.n_features_in_ = p
        self.mtry_ = mtry
        self.n_train_ = n
        self.y_min_ = float(y.min())
        self.y_max_ = float(y.max())
        if feature_names is not None:
            names = [str(s) for s in feature_names]
            if len(names) != p:
                raise TrainingError(f"{len(names)} feature names for {p} features")
            self.feature_names_ = names
        else:
            self.feature_names_ = [f"x{i}" for i in range(p)]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=np.float64, ensure_all_finite=False, order="C")
        if X.shape[1] != self.n_features_in_:
            raise PredictionError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        bad = ~np.isfinite(X).all(axis=1)
        if bad.any():
            raise PredictionError(f"{int(bad.sum())} row(s) contain nodata features")
        return X

    def tree_predictions(self, X) -> np.ndarray:
        """Per-tree predictions, shape ``(n_trees, n_rows)``."""
        X = self._check_X(X)
        return np.stack([t.predict(X) for t in self.trees_])

    def predict(self, X) -> np.ndarray:
        """Ensemble mean.

        Per-row tree outputs are summed in sorted order, so the result does
        not depend on tree order, and clipped to the outputs' own range to
        absorb rounding.
        """
        preds = np.sort(self.tree_predictions(X), axis=0)
        total = np.zeros(preds.shape[1])
        for row in preds:
            total = total + row
        mean = total / preds.shape[0]
        return np.clip(mean, preds[0], preds[-1])

    # ------------------------------------------------------------------
    # out-of-bag diagnostics
    # ------------------------------------------------------------------

    def _oob_rows(self, i):
        rows, _ = bootstrap_rows(int(self.random_state) + i, self.n_train_, True)
        inbag = np.zeros(self.n_train_, dtype=bool)
        inbag[rows] = True
        return np.flatnonzero(~inbag).astype(np.int64)

    def _check_oob(self, X, y):
        if not self.bootstrap:
            raise TrainingError("out-of-bag estimates need bootstrap sampling")
        X = self._check_X(X)
        y = np.asarray(y, dtype=np.float64).ravel()
        if X.shape[0] != self.n_train_ or y.shape[0] != self.n_train_:
            raise TrainingError("OOB diagnostics need the exact training set")
        return X, y

    def oob_tree_mse(self, X, y, col=-1, permutations=None) -> np.ndarray:
        """Per-tree OOB mean squared error, optionally with column ``col`` permuted.

        ``permutations[i]`` reorders the OOB rows of tree ``i``; NaN marks a
        tree without OOB rows.
        """
        X, y = self._check_oob(X, y)
        out = np.full(len(self.trees_), np.nan)
        for i, t in enumerate(self.trees_):
            oob = self._oob_rows(i)
            if oob.size == 0:
                continue
            if col >= 0:
                perm = permutations[i] if permutations is not None else np.arange(oob.size)
                repl = X[oob[perm], col]
            else:
                repl = np.empty(oob.size)
            pred = predict_tree_rows(X, oob, col, repl, t.feature, t.threshold, t.left, t.right, t.value)
            out[i] = np.mean((pred - y[oob]) ** 2)
        return out

    def permutation_importance(self, X, y, random_state=None) -> np.ndarray:
        """Mean over trees of the OOB MSE increase after permuting each feature."""
        X, y = self._check_oob(X, y)
        seed = int(self.random_state if random_state is None else random_state)
        base = np.full(len(self.trees_), np.nan)
        oobs = []
        for i, t in enumerate(self.trees_):
            oob = self._oob_rows(i)
            oobs.append(oob)
            if oob.size:
                pred = predict_tree_rows(X, oob, -1, np.empty(0), t.feature, t.threshold,
                                         t.left, t.right, t.value)
                base[i] = np.mean((pred - y[oob]) ** 2)
        has = ~np.isnan(base)
        if not has.any():
            raise TrainingError("no tree has out-of-bag rows")
        scores = np.zeros(self.n_features_in_)
        for i, t in enumerate(self.trees_):
            if not has[i]:
                continue
            oob = oobs[i]
            rng = np.random.default_rng([seed, i])
            for j in t.used_features():
                repl = X[oob[rng.permutation(oob.size)], j]
                pred = predict_tree_rows(X, oob, int(j), repl, t.feature, t.threshold,
                                         t.left, t.right, t.value)
                scores[j] += np.mean((pred - y[oob]) ** 2) - base[i]
        return scores / has.sum()


# ---------------------------------------------------------------------------
# functional front-end
# ---------------------------------------------------------------------------

DEFAULT_PARAMS = {"n_trees": 500, "mtry": None, "min_node": 5, "bootstrap": True}


def train(ts: TrainSet, params=None, seed=None, subregion_id=None, n_jobs=1) -> ForestRegressor:
    params = {**DEFAULT_PARAMS, **(params or {})}
    if seed is None:
        seed = params.pop("seed", None)
    else:
        params.pop("seed", None)
    model = ForestRegressor(random_state=seed, subregion_id=subregion_id, n_jobs=n_jobs, **params)
    return model.fit(ts.X, ts.y, feature_names=ts.feature_names)


def predict(model: ForestRegressor, x) -> float:
    """Prediction for one feature row."""
    x = np.asarray(x, dtype=np.float64)
    return float(model.predict(x.reshape(1, -1))[0])


def variable_importance(model: ForestRegressor, ts: TrainSet) -> np.ndarray:
    return model.permutation_importance(ts.X, ts.y)


def tree_depths(model: ForestRegressor):
    """Max depth of each tree (diagnostics)."""
    out = []
    for t in model.trees_:
        depth = np.zeros(t.n_nodes, dtype=np.int64)
        for node in range(t.n_nodes):
            if t.feature[node] != LEAF:
                depth[t.left[node]] = depth[node] + 1
                depth[t.right[node]] = depth[node] + 1
        out.append(int(depth.max()))
    return out

