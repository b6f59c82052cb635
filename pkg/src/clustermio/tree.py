"""Greedy CART classification tree mapping covariates to cluster distributions."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DegenerateData, ShapeMismatch

HARD = "hard"
SOFT = "soft"


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 5
    min_samples_leaf: int = 5
    min_impurity_decrease: float = 0.0
    criterion: str = "gini"
    laplace: bool = False


@dataclass(frozen=True, eq=False)
class Leaf:
    class_counts: np.ndarray


@dataclass(frozen=True, eq=False)
class Internal:
    feature: int
    threshold: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Internal]


@dataclass(frozen=True, eq=False)
class TreeModel:
    root: Node
    K: int
    n_features: int
    params: TreeParams = field(default_factory=TreeParams)
    depth: int = 0
    degenerate: bool = False

    def leaves(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                yield node
            else:
                stack.extend([node.right, node.left])


def _impurity(counts: np.ndarray, criterion: str) -> np.ndarray:
    """Impurity of each row of a (..., K) count array."""
    total = counts.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        prob = np.where(total > 0, counts / total, 0.0)
        if criterion == "gini":
            return 1.0 - np.sum(prob**2, axis=-1)
        if criterion == "entropy":
            logs = np.where(prob > 0, np.log2(np.where(prob > 0, prob, 1.0)), 0.0)
            return -np.sum(prob * logs, axis=-1)
    raise ValueError(f"unknown criterion {criterion!r}")


def _best_split(X, codes, K, params, n_total):
    """Best (feature, threshold, decrease) for one node, or None."""
    n = X.shape[0]
    counts = np.bincount(codes, minlength=K).astype(float)
    parent = float(_impurity(counts, params.criterion))
    leaf = params.min_samples_leaf
    best = None
    best_child = np.inf
    onehot = np.eye(K)[codes]
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        left = np.cumsum(onehot[order], axis=0)[:-1]  # left counts after i+1 rows
        n_left = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (n_left >= leaf) & (n - n_left >= leaf)
        if not valid.any():
            continue
        right = counts - left
        child = (n_left * _impurity(left, params.criterion) + (n - n_left) * _impurity(right, params.criterion)) / n
        child = np.where(valid, child, np.inf)
        i = int(np.argmin(child))  # lowest threshold among ties
        if child[i] < best_child - 1e-12:
            best_child = child[i]
            best = (f, 0.5 * (xs[i] + xs[i + 1]))
    if best is None:
        return None
    decrease = (n / n_total) * (parent - best_child)
    return best[0], best[1], decrease


def fit_tree(X, labels, K: Optional[int] = None, params: Optional[TreeParams] = None) -> TreeModel:
    """Fit a classification tree.

    ``labels`` are integer cluster codes in ``[0, K)``.  Splits send
    ``x[feature] <= threshold`` to the left child.
    """
    params = params or TreeParams()
    X = np.asarray(X, dtype=float)
    codes = np.asarray(labels, dtype=int).ravel()
    if X.ndim != 2 or X.shape[0] != codes.shape[0]:
        raise ShapeMismatch("X must be n-by-p with one label per row")
    K = int(codes.max()) + 1 if K is None else int(K)
    if K < 1:
        raise ValueError("need at least one class")
    n = X.shape[0]
    if n < 2 * params.min_samples_leaf:
        raise ValueError(f"need at least {2 * params.min_samples_leaf} rows for min_samples_leaf={params.min_samples_leaf}")

    degenerate = K > 1 and len(np.unique(codes)) > 1 and np.all(X == X[0])
    if degenerate:
        warnings.warn("all rows identical but labels differ; tree is a single leaf", DegenerateData, stacklevel=2)

    max_seen = 0

    def grow(rows, depth):
        nonlocal max_seen
        max_seen = max(max_seen, depth)
        counts = np.bincount(codes[rows], minlength=K)
        if depth >= params.max_depth or np.count_nonzero(counts) <= 1:
            return Leaf(counts)
        split = _best_split(X[rows], codes[rows], K, params, n)
        if split is None:
            return Leaf(counts)
        f, thr, decrease = split
        if decrease <= 0 or decrease < params.min_impurity_decrease:
            return Leaf(counts)
        go_left = X[rows, f] <= thr
        return Internal(f, float(thr), grow(rows[go_left], depth + 1), grow(rows[~go_left], depth + 1))

    root = grow(np.arange(n), 0)
    depth = _depth(root)
    return TreeModel(root=root, K=K, n_features=X.shape[1], params=params, depth=depth, degenerate=bool(degenerate))


def _depth(node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(_depth(node.left), _depth(node.right))


def _leaf_distribution(leaf: Leaf, laplace: bool) -> np.ndarray:
    c = leaf.class_counts.astype(float)
    if laplace:
        c = c + 1.0
    return c / c.sum()


def predict_distribution(model: TreeModel, X_new) -> np.ndarray:
    """Leaf class frequencies for each row; a 1-D input gives a single distribution."""
    X_new = np.asarray(X_new, dtype=float)
    single = X_new.ndim == 1
    X2 = np.atleast_2d(X_new)
    if X2.shape[1] != model.n_features:
        raise ShapeMismatch(f"expected {model.n_features} features, got {X2.shape[1]}")
    out = np.empty((X2.shape[0], model.K))
    stack = [(model.root, np.arange(X2.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        if isinstance(node, Leaf):
            out[rows] = _leaf_distribution(node, model.params.laplace)
            continue
        left = X2[rows, node.feature] <= node.threshold
        stack.append((node.left, rows[left]))
        stack.append((node.right, rows[~left]))
    return out[0] if single else out


def assign_effect(pi, gamma_row, mode: str = SOFT):
    """Cluster offset from a distribution over clusters.

    Hard: the effect of the most probable cluster (lowest index on ties).
    Soft: the probability-weighted average of the effects.  ``pi`` may be a
    single distribution or an n-by-K stack.
    """
    pi = np.asarray(pi, dtype=float)
    gamma_row = np.asarray(gamma_row, dtype=float)
    if mode == HARD:
        return gamma_row[np.argmax(pi, axis=-1)]
    if mode == SOFT:
        return pi @ gamma_row
    raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")


# ---------------------------------------------------------------------------
# export


def _node_to_dict(node):
    if isinstance(node, Leaf):
        return {"leaf": True, "class_counts": node.class_counts.tolist()}
    return {
        "leaf": False,
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d):
    if d["leaf"]:
        return Leaf(np.asarray(d["class_counts"], dtype=int))
    return Internal(int(d["feature"]), float(d["threshold"]), _node_from_dict(d["left"]), _node_from_dict(d["right"]))


def tree_to_dict(model: TreeModel) -> dict:
    return {
        "K": model.K,
        "n_features": model.n_features,
        "depth": model.depth,
        "params": {
            "max_depth": model.params.max_depth,
            "min_samples_leaf": model.params.min_samples_leaf,
            "min_impurity_decrease": model.params.min_impurity_decrease,
            "criterion": model.params.criterion,
            "laplace": model.params.laplace,
        },
        "root": _node_to_dict(model.root),
    }


def tree_from_dict(d: dict) -> TreeModel:
    return TreeModel(
        root=_node_from_dict(d["root"]),
        K=int(d["K"]),
        n_features=int(d["n_features"]),
        params=TreeParams(**d["params"]),
        depth=int(d["depth"]),
    )


def tree_to_json(model: TreeModel, **kwargs) -> str:
    return json.dumps(tree_to_dict(model), **kwargs)


def tree_to_text(model: TreeModel, feature_names=None, cluster_names=None) -> str:
    """Indented, human-readable rendering of the tree."""
    fname = (lambda j: feature_names[j]) if feature_names is not None else (lambda j: f"x[{j}]")
    cname = list(cluster_names) if cluster_names is not None else list(range(model.K))
    lines = []

    def walk(node, indent):
        pad = "|   " * indent
        if isinstance(node, Leaf):
            total = int(node.class_counts.sum())
            k = int(np.argmax(node.class_counts))
            lines.append(f"{pad}leaf: n={total}, majority={cname[k]}, counts={node.class_counts.tolist()}")
            return
        lines.append(f"{pad}{fname(node.feature)} <= {node.threshold:.6g}")
        walk(node.left, indent + 1)
        lines.append(f"{pad}{fname(node.feature)} > {node.threshold:.6g}")
        walk(node.right, indent + 1)

    walk(model.root, 0)
    return "\n".join(lines) + "\n"
