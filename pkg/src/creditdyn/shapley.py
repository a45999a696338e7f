"""Path-dependent TreeSHAP attributions for boosted models and grouped
importance aggregation (borrower vs network feature shares)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from creditdyn import _tree_kernels as _k
from creditdyn.boosting import BoostedModel


@dataclass
class ShapRow:
    attributions: np.ndarray  # one value per model column, margin space
    base_value: float         # cover-weighted expected margin

    def total(self) -> float:
        return self.base_value + float(self.attributions.sum())


def tree_shap(model: BoostedModel, row) -> ShapRow:
    """Shapley attribution of one row's margin, conditioning on tree paths
    weighted by training cover. Satisfies local accuracy:
    base_value + sum(attributions) == predict_margin(row)."""
    return ShapRow(attributions=shap_values(model, np.atleast_2d(row))[0],
                   base_value=model.expected_margin())


def shap_values(model: BoostedModel, X) -> np.ndarray:
    """Per-row, per-feature attributions (margin space, learning-rate
    scaled) for a batch of rows."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"schema mismatch: model expects {model.n_features} "
                         f"columns, got {X.shape[1]}")
    phi = np.zeros((X.shape[0], model.n_features))
    max_depth = model.params.max_depth if model.params is not None else 32
    for tree in model.trees:
        depth = min(max_depth, _tree_depth(tree))
        _k.tree_shap_batch(X, tree.feat, tree.thr, tree.miss_left,
                           tree.left, tree.right, tree.value, tree.cover,
                           depth, phi)
    return phi * model.learning_rate


def _tree_depth(tree) -> int:
    depth = np.zeros(tree.n_nodes, dtype=np.int64)
    for u in range(tree.n_nodes):
        if tree.left[u] >= 0:
            depth[tree.left[u]] = depth[u] + 1
            depth[tree.right[u]] = depth[u] + 1
    return int(depth.max()) if tree.n_nodes else 0


@dataclass(frozen=True)
class GroupImportance:
    borrower_share: float
    network_share: float
    defined: bool = True


def explanation_sample(row_ids, n_max: int, seed: int) -> np.ndarray:
    """Deterministic sample of row positions: the n_max smallest keyed
    hashes of the row ids."""
    key = int(seed).to_bytes(8, "little", signed=True)
    hashes = [hashlib.blake2b(str(r).encode(), digest_size=8, key=key).digest()
              for r in row_ids]
    order = sorted(range(len(row_ids)), key=lambda i: hashes[i])
    return np.array(sorted(order[:n_max]), dtype=np.int64)


def group_importance(model: BoostedModel, X, borrower_columns,
                     sample_ids=None, sample_max: int = 2000,
                     seed: int = 0) -> GroupImportance:
    """Mean-|Shapley| importance split between the borrower feature group
    and the network feature group.

    ``borrower_columns`` is the set of column names counted as borrower
    features (financial + repayment history); everything else in the
    model schema counts as network."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("explanation sample is empty")
    if sample_ids is not None and X.shape[0] > sample_max:
        X = X[explanation_sample(sample_ids, sample_max, seed)]
    phi = shap_values(model, X)
    importance = np.abs(phi).mean(axis=0)
    borrower_mask = np.array([c in set(borrower_columns) for c in model.columns])
    total = float(importance.sum())
    if total == 0.0:
        return GroupImportance(float("nan"), float("nan"), defined=False)
    borrower = float(importance[borrower_mask].sum()) / total
    return GroupImportance(borrower_share=borrower, network_share=1.0 - borrower)
