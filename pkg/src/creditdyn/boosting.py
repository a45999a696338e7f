"""Gradient boosted decision trees for binary classification with
logistic loss, Newton leaf weights, missing-value routing and exhaustive
grid search over (n_trees, learning_rate, min_data_in_leaf)."""

from __future__ import annotations

import itertools
import os
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from creditdyn import _tree_kernels as _k
from creditdyn.metrics import auc, make_folds


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class HyperParams:
    n_trees: int = 100
    learning_rate: float = 0.1
    min_data_in_leaf: int = 20
    max_depth: int = 6
    l2_leaf_reg: float = 1.0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.min_data_in_leaf < 1:
            raise ValueError("min_data_in_leaf must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.l2_leaf_reg < 0:
            raise ValueError("l2_leaf_reg must be >= 0")


@dataclass(frozen=True)
class GridSpec:
    n_trees_choices: tuple = (50, 100, 200)
    learning_rate_choices: tuple = (0.05, 0.1)
    min_data_in_leaf_choices: tuple = (20, 50, 100)

    def __post_init__(self):
        if not (self.n_trees_choices and self.learning_rate_choices
                and self.min_data_in_leaf_choices):
            raise ValueError("grid choice lists must be non-empty")

    def points(self, base: HyperParams = HyperParams()):
        for nt, lr, ml in itertools.product(self.n_trees_choices,
                                            self.learning_rate_choices,
                                            self.min_data_in_leaf_choices):
            yield replace(base, n_trees=nt, learning_rate=lr, min_data_in_leaf=ml)


@dataclass
class Tree:
    feat: np.ndarray       # split column, -1 at leaves
    thr: np.ndarray
    miss_left: np.ndarray  # bool, default direction for NaN
    left: np.ndarray       # child ids, -1 at leaves
    right: np.ndarray
    value: np.ndarray      # leaf weight (raw, unscaled)
    cover: np.ndarray      # training rows through each node

    @property
    def n_nodes(self) -> int:
        return len(self.feat)

    def predict_into(self, X: np.ndarray, out: np.ndarray) -> None:
        _k.predict_tree(X, self.feat, self.thr, self.miss_left,
                        self.left, self.right, self.value, out)

    def expected_value(self) -> float:
        """Cover-weighted mean leaf value (raw)."""
        leaves = self.left < 0
        return float((self.value[leaves] * self.cover[leaves]).sum() / self.cover[0])


@dataclass
class BoostedModel:
    base_score: float                 # log-odds of the training base rate
    learning_rate: float
    trees: list
    columns: list
    params: HyperParams | None = field(default=None, compare=False)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"schema mismatch: model expects {self.n_features} "
                             f"columns, got {X.shape[1]}")
        return X

    def predict_margin(self, X) -> np.ndarray:
        X = self._check(X)
        raw = np.zeros(X.shape[0])
        for tree in self.trees:
            tree.predict_into(X, raw)
        return self.base_score + self.learning_rate * raw

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.predict_margin(X))

    def expected_margin(self) -> float:
        """Cover-weighted expectation of the margin over training rows."""
        return self.base_score + self.learning_rate * sum(
            t.expected_value() for t in self.trees)

    # -- serialization ---------------------------------------------------

    FORMAT_HEADER = "creditdyn-model v1"

    def save(self, path) -> None:
        lines = [self.FORMAT_HEADER,
                 "columns\t" + "\t".join(self.columns),
                 f"base_score\t{float(self.base_score)!r}",
                 f"learning_rate\t{float(self.learning_rate)!r}",
                 f"n_trees\t{len(self.trees)}"]
        for t, tree in enumerate(self.trees):
            lines.append(f"tree\t{t}\t{tree.n_nodes}")
            for u in range(tree.n_nodes):
                if tree.left[u] < 0:
                    lines.append(f"leaf\t{u}\t{float(tree.value[u])!r}\t"
                                 f"{float(tree.cover[u])!r}")
                else:
                    lines.append(
                        f"split\t{u}\t{int(tree.feat[u])}\t{float(tree.thr[u])!r}\t"
                        f"{int(tree.miss_left[u])}\t{int(tree.left[u])}\t"
                        f"{int(tree.right[u])}\t{float(tree.cover[u])!r}")
        data = "\n".join(lines) + "\n"
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "BoostedModel":
        with open(path) as f:
            lines = f.read().splitlines()
        if not lines or lines[0] != cls.FORMAT_HEADER:
            raise ValueError(f"{path}: not a {cls.FORMAT_HEADER} file")
        columns = lines[1].split("\t")[1:]
        base_score = float(lines[2].split("\t")[1])
        learning_rate = float(lines[3].split("\t")[1])
        n_trees = int(lines[4].split("\t")[1])
        trees = []
        i = 5
        for _ in range(n_trees):
            parts = lines[i].split("\t")
            assert parts[0] == "tree"
            n_nodes = int(parts[2])
            i += 1
            tree = Tree(feat=np.full(n_nodes, -1, dtype=np.int64),
                        thr=np.zeros(n_nodes),
                        miss_left=np.zeros(n_nodes, dtype=np.bool_),
                        left=np.full(n_nodes, -1, dtype=np.int64),
                        right=np.full(n_nodes, -1, dtype=np.int64),
                        value=np.zeros(n_nodes),
                        cover=np.zeros(n_nodes))
            for _ in range(n_nodes):
                parts = lines[i].split("\t")
                u = int(parts[1])
                if parts[0] == "leaf":
                    tree.value[u] = float(parts[2])
                    tree.cover[u] = float(parts[3])
                else:
                    tree.feat[u] = int(parts[2])
                    tree.thr[u] = float(parts[3])
                    tree.miss_left[u] = bool(int(parts[4]))
                    tree.left[u] = int(parts[5])
                    tree.right[u] = int(parts[6])
                    tree.cover[u] = float(parts[7])
                i += 1
            trees.append(tree)
        return cls(base_score=base_score, learning_rate=learning_rate,
                   trees=trees, columns=columns)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _presort(X: np.ndarray):
    # argsort puts NaN last; stable kind keeps row order deterministic
    sort_idx = np.argsort(X, axis=0, kind="stable").astype(np.int64)
    n_finite = (~np.isnan(X)).sum(axis=0).astype(np.int64)
    return np.ascontiguousarray(sort_idx), n_finite


def train(X, y, params: HyperParams, columns=None) -> BoostedModel:
    """Fit a boosted-trees classifier. Each round fits a regression tree
    to the first/second-order gradients of logistic loss; leaf weight is
    the Newton step -G/(H + l2)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise TrainingError("training matrix must be 2-D and non-empty")
    if X.shape[0] != y.shape[0]:
        raise TrainingError("X and y length mismatch")
    if X.shape[0] < 2:
        raise TrainingError("need at least 2 rows")
    p = float(y.mean())
    if p <= 0.0 or p >= 1.0:
        raise TrainingError("labels are single-class; cannot train")
    if columns is None:
        columns = [f"f{j}" for j in range(X.shape[1])]
    base = float(np.log(p / (1.0 - p)))

    sort_idx, n_finite = _presort(X)
    max_nodes = 2 ** (params.max_depth + 2)
    margin = np.full(X.shape[0], base)
    node_of_row = np.empty(X.shape[0], dtype=np.int64)
    trees = []
    for _ in range(params.n_trees):
        prob = _sigmoid(margin)
        g = prob - y
        h = prob * (1.0 - prob)
        feat = np.empty(max_nodes, dtype=np.int64)
        thr = np.empty(max_nodes)
        miss_left = np.empty(max_nodes, dtype=np.bool_)
        left = np.empty(max_nodes, dtype=np.int64)
        right = np.empty(max_nodes, dtype=np.int64)
        value = np.empty(max_nodes)
        cover = np.empty(max_nodes)
        n_nodes = _k.grow_tree(X, sort_idx, n_finite, g, h,
                               params.max_depth, params.min_data_in_leaf,
                               params.l2_leaf_reg,
                               feat, thr, miss_left, left, right, value, cover,
                               node_of_row)
        tree = Tree(feat=feat[:n_nodes].copy(), thr=thr[:n_nodes].copy(),
                    miss_left=miss_left[:n_nodes].copy(),
                    left=left[:n_nodes].copy(), right=right[:n_nodes].copy(),
                    value=value[:n_nodes].copy(), cover=cover[:n_nodes].copy())
        trees.append(tree)
        margin += params.learning_rate * tree.value[node_of_row]
    return BoostedModel(base_score=base, learning_rate=params.learning_rate,
                        trees=trees, columns=list(columns), params=params)


@dataclass(frozen=True)
class GridPointResult:
    params: HyperParams
    mean_auc: float   # nan when the point failed
    error: str = ""


def grid_search(X, y, grid: GridSpec, k: int = 3, seed: int = 0,
                row_ids=None, base: HyperParams = HyperParams()):
    """Evaluate every grid point by k-fold CV mean AUC; return the argmax
    and the full per-point table. Ties go to fewer trees, then lower
    learning rate, then lower min_data_in_leaf. Training errors fail the
    point, not the search."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if row_ids is None:
        row_ids = [str(i) for i in range(X.shape[0])]
    folds = make_folds(row_ids, k, seed)
    results = []
    for params in grid.points(base):
        fold_aucs = []
        error = ""
        try:
            for f in range(k):
                test = folds == f
                model = train(X[~test], y[~test], params)
                fold_aucs.append(auc(model.predict_margin(X[test]), y[test]))
        except (TrainingError, ValueError) as e:
            error = str(e)
        mean = float(np.mean(fold_aucs)) if not error else float("nan")
        results.append(GridPointResult(params=params, mean_auc=mean, error=error))
    valid = [r for r in results if not r.error]
    if not valid:
        raise TrainingError("every grid point failed: " + results[0].error)
    best = min(valid, key=lambda r: (-r.mean_auc, r.params.n_trees,
                                     r.params.learning_rate,
                                     r.params.min_data_in_leaf))
    return best.params, results
