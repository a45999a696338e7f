"""Discrimination metrics (KS, AUC), borrower-aligned fold assignment and
paired t-tests for model comparison."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import stats

ALPHA = 0.05


class UndefinedMetricError(ValueError):
    """Raised when a metric needs both classes and only one is present."""


def _check_binary(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if not np.all(np.isin(uniq, [0, 1])):
        raise ValueError(f"labels must be binary 0/1, got values {uniq}")
    if uniq.size < 2:
        raise UndefinedMetricError("both classes must be present")
    return labels.astype(np.int8)


def auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative.

    Computed from average ranks; ties between a positive and a negative
    count 0.5, which makes this identical to the O(n^2) pairwise
    definition.
    """
    scores = np.asarray(scores, dtype=float)
    labels = _check_binary(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    ranks = stats.rankdata(scores)
    rank_sum_pos = ranks[labels == 1].sum()
    return float((rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def ks(scores, labels) -> float:
    """Max vertical distance between the per-class score ECDFs."""
    scores = np.asarray(scores, dtype=float)
    labels = _check_binary(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    thresholds = np.unique(scores)
    cdf_pos = np.searchsorted(pos, thresholds, side="right") / pos.size
    cdf_neg = np.searchsorted(neg, thresholds, side="right") / neg.size
    return float(np.abs(cdf_pos - cdf_neg).max())


def make_folds(borrower_ids, k: int, seed: int) -> np.ndarray:
    """Deterministic fold assignment by keyed hash of the borrower id.

    The same (borrower_id, seed) pair always lands in the same fold, so
    folds stay aligned across months and experiments.
    """
    ids = [str(b) for b in borrower_ids]
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds number of borrowers ({len(ids)})")
    key = int(seed).to_bytes(8, "little", signed=True)
    out = np.empty(len(ids), dtype=np.int64)
    for i, b in enumerate(ids):
        digest = hashlib.blake2b(b.encode("utf-8"), digest_size=8, key=key).digest()
        out[i] = int.from_bytes(digest, "little") % k
    return out


@dataclass
class CvResult:
    """Per-fold (KS, AUC) pairs from one cross-validated model cell."""
    fold_ks: list
    fold_auc: list
    fold_assignment_id: str = ""

    @property
    def k(self) -> int:
        return len(self.fold_ks)

    @property
    def mean_ks(self) -> float:
        return float(np.mean(self.fold_ks))

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_auc))

    @property
    def sd_ks(self) -> float:
        return float(np.std(self.fold_ks, ddof=0))

    @property
    def sd_auc(self) -> float:
        return float(np.std(self.fold_auc, ddof=0))


@dataclass(frozen=True)
class ComparisonResult:
    delta_mean: float
    relative_increment: float  # nan when the baseline mean is 0
    p_value: float
    significant: bool

    @property
    def relative_increment_defined(self) -> bool:
        return not np.isnan(self.relative_increment)


def paired_ttest(a, b, alpha: float = ALPHA) -> ComparisonResult:
    """Two-sided paired t-test of b against a on per-fold values.

    Degenerate cases: identical vectors give p = 1; a constant nonzero
    difference gives p = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("fold vectors must have equal length")
    if a.size < 2:
        raise ValueError("need at least 2 folds")
    d = b - a
    mean_a, mean_b = float(a.mean()), float(b.mean())
    delta = mean_b - mean_a
    rel = delta / mean_a if mean_a != 0.0 else float("nan")
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        p = 1.0 if float(d.mean()) == 0.0 else 0.0
    else:
        t = float(d.mean()) / (sd / np.sqrt(d.size))
        p = float(2.0 * stats.t.sf(abs(t), df=d.size - 1))
    return ComparisonResult(delta_mean=delta, relative_increment=rel,
                            p_value=p, significant=p < alpha)
