"""Plain-text model files.

Grammar (one item per line, fields separated by single spaces)::

    urbanheight-forest 1
    n_trees <int>
    mtry <int>
    min_node <int>
    bootstrap <0|1>
    seed <int>
    subregion_id <int|none>
    n_features <int>
    n_train <int>
    y_min <float>
    y_max <float>
    feature_names <JSON array of strings>
    tree <index> <n_nodes>
    node <split_idx> <threshold>      # internal node, then its left and right subtrees
    leaf <value>
    ...
    end

Trees are written in preorder. Floats use the shortest round-trip repr, so
loading reproduces every threshold and leaf value exactly.
"""

from __future__ import annotations

import json

import numpy as np

from ..exceptions import UrbanHeightError
from ._tree import LEAF
from .forest import ForestRegressor, Tree

MAGIC = "urbanheight-forest 1"


class ModelFormatError(UrbanHeightError, ValueError):
    pass


def _preorder(tree: Tree, out: list) -> None:
    stack = [0]
    while stack:
        node = stack.pop()
        if tree.feature[node] == LEAF:
            out.append(f"leaf {float(tree.value[node])!r}")
        else:
            out.append(f"node {int(tree.feature[node])} {float(tree.threshold[node])!r}")
            stack.append(int(tree.right[node]))
            stack.append(int(tree.left[node]))


def dumps(model: ForestRegressor) -> str:
    sid = "none" if model.subregion_id is None else str(int(model.subregion_id))
    lines = [
        MAGIC,
        f"n_trees {len(model.trees_)}",
        f"mtry {model.mtry_}",
        f"min_node {int(model.min_node)}",
        f"bootstrap {int(bool(model.bootstrap))}",
        f"seed {int(model.random_state)}",
        f"subregion_id {sid}",
        f"n_features {model.n_features_in_}",
        f"n_train {model.n_train_}",
        f"y_min {model.y_min_!r}",
        f"y_max {model.y_max_!r}",
        f"feature_names {json.dumps(model.feature_names_)}",
    ]
    for i, t in enumerate(model.trees_):
        lines.append(f"tree {i} {t.n_nodes}")
        _preorder(t, lines)
    lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_tree(lines, pos, n_nodes):
    """Rebuild node arrays from preorder lines; ids follow preorder."""
    feature = np.full(n_nodes, LEAF, dtype=np.int64)
    threshold = np.zeros(n_nodes)
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    value = np.zeros(n_nodes)
    # stack of (parent id, side) waiting for a child
    pending = []
    for node in range(n_nodes):
        if pos >= len(lines):
            raise ModelFormatError("unexpected end of file inside a tree")
        parts = lines[pos].split()
        pos += 1
        if pending:
            parent, side = pending.pop()
            (left if side == 0 else right)[parent] = node
        elif node != 0:
            raise ModelFormatError(f"line {pos}: extra node after a complete tree")
        if parts[0] == "leaf" and len(parts) == 2:
            value[node] = float(parts[1])
        elif parts[0] == "node" and len(parts) == 3:
            feature[node] = int(parts[1])
            threshold[node] = float(parts[2])
            pending.append((node, 1))
            pending.append((node, 0))
        else:
            raise ModelFormatError(f"line {pos}: bad tree entry {lines[pos - 1]!r}")
    if pending:
        raise ModelFormatError("tree ended with unfilled children")
    return Tree(feature, threshold, left, right, value), pos


def loads(text: str) -> ForestRegressor:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        raise ModelFormatError("not a forest model file")
    header = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("tree "):
        if lines[pos].strip() == "end":
            break
        key, _, val = lines[pos].partition(" ")
        header[key] = val
        pos += 1
    try:
        n_trees = int(header["n_trees"])
        sid = header["subregion_id"]
        model = ForestRegressor(
            n_trees=n_trees, mtry=int(header["mtry"]), min_node=int(header["min_node"]),
            bootstrap=bool(int(header["bootstrap"])), random_state=int(header["seed"]),
            subregion_id=None if sid == "none" else int(sid),
        )
        model.mtry_ = int(header["mtry"])
        model.n_features_in_ = int(header["n_features"])
        model.n_train_ = int(header["n_train"])
        model.y_min_ = float(header["y_min"])
        model.y_max_ = float(header["y_max"])
        model.feature_names_ = list(json.loads(header["feature_names"]))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad header: {exc}") from None

    trees = []
    for i in range(n_trees):
        parts = lines[pos].split() if pos < len(lines) else []
        if len(parts) != 3 or parts[0] != "tree" or int(parts[1]) != i:
            raise ModelFormatError(f"line {pos + 1}: expected 'tree {i} <n_nodes>'")
        tree, pos = _parse_tree(lines, pos + 1, int(parts[2]))
        if np.any(tree.feature >= model.n_features_in_):
            raise ModelFormatError(f"tree {i} splits on a feature index >= {model.n_features_in_}")
        trees.append(tree)
    if pos >= len(lines) or lines[pos].strip() != "end":
        raise ModelFormatError("missing 'end' line")
    model.trees_ = trees
    return model


def save_model(model: ForestRegressor, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(model))


def load_model(path) -> ForestRegressor:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
