"""Random forest of CART trees (Gini impurity, bootstrap, random feature subsets)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from harlm import kernels
from harlm.classifiers.base import ClassifierModel, check_trainable
from harlm.dataset import LabeledDataset


@dataclass
class Tree:
    """Flat array tree.  Leaves have ``left == right == -1``.

    ``value`` holds the per-class sample counts reaching each node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, K) int64

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return kernels.tree_apply(self.feature, self.threshold, self.left, self.right, X)

    def predict_indices(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.value[self.apply(X)], axis=1)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=np.int64).reshape(len(d["feature"]), -1),
        )

    @classmethod
    def leaf(cls, counts) -> "Tree":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(
            feature=np.array([0]), threshold=np.array([0.0]),
            left=np.array([-1]), right=np.array([-1]), value=counts[None, :],
        )


def grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    rows: np.ndarray,
    rng: np.random.Generator,
    max_features: int,
    max_depth: int | None = None,
    min_samples_split: int = 2,
) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(0)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    n_feat = X.shape[1]
    stack = [(new_node(rows), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = value[node]
        if (
            idx.size < min_samples_split
            or np.count_nonzero(counts) <= 1
            or (max_depth is not None and depth >= max_depth)
        ):
            continue
        cand = rng.permutation(n_feat).astype(np.int64)
        f, thr, _ = kernels.best_split(X, y, idx, n_classes, cand, max_features)
        if f < 0:
            continue
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node] = f
        threshold[node] = thr
        ln, rn = new_node(li), new_node(ri)
        left[node], right[node] = ln, rn
        # right pushed first so the left subtree is numbered first
        stack.append((rn, ri, depth + 1))
        stack.append((ln, li, depth + 1))
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.int64).reshape(len(feature), n_classes),
    )


class RandomForestModel(ClassifierModel):
    kind = "RANDOM_FOREST"

    def __init__(self, trees: list[Tree], **common):
        super().__init__(**common)
        self.trees = trees

    def tree_votes(self, X) -> np.ndarray:
        """(n_trees, N) predicted class index of every tree."""
        Xp = self._prepare(X)
        return np.stack([t.predict_indices(Xp) for t in self.trees])

    def _raw_scores(self, X: np.ndarray) -> np.ndarray:
        k = len(self.label_vocabulary)
        votes = np.zeros((X.shape[0], k))
        rows = np.arange(X.shape[0])
        for t in self.trees:
            votes[rows, t.predict_indices(X)] += 1.0
        return votes / len(self.trees)

    def _params_to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def _params_from_dict(cls, d, **common):
        return cls(trees=[Tree.from_dict(t) for t in d["trees"]], **common)


def train_random_forest(
    data: LabeledDataset,
    n_trees: int = 100,
    max_depth: int | None = None,
    seed: int = 0,
    max_features: int | str = "sqrt",
    min_samples_split: int = 2,
    bootstrap: bool = True,
) -> RandomForestModel:
    """Bagged CART forest on raw (unnormalised) features.

    ``max_features="sqrt"`` examines ``ceil(sqrt(D))`` random columns per split
    (more only if all of them are constant on the node).
    """
    check_trainable(data)
    X = np.ascontiguousarray(data.features, dtype=np.float64)
    y = data.label_indices()
    n, d = X.shape
    if max_features == "sqrt":
        m = max(1, math.ceil(math.sqrt(d)))
    elif max_features in (None, "all"):
        m = d
    else:
        m = int(max_features)
    rng = np.random.default_rng(seed)
    tree_seeds = rng.integers(0, 2**63 - 1, size=n_trees)
    trees = []
    for ts in tree_seeds:
        trng = np.random.default_rng(int(ts))
        rows = trng.integers(0, n, size=n).astype(np.int64) if bootstrap else np.arange(n, dtype=np.int64)
        trees.append(grow_tree(X, y, data.n_classes, rows, trng, m, max_depth, min_samples_split))
    hp = {
        "n_trees": n_trees,
        "max_depth": max_depth,
        "max_features": m,
        "min_samples_split": min_samples_split,
        "bootstrap": bootstrap,
        "seed": seed,
    }
    return RandomForestModel(
        trees=trees,
        label_vocabulary=data.label_vocabulary,
        feature_names=data.feature_names,
        normalization=None,
        hyperparameters=hp,
    )
