"""Two-stage filter feature selection: univariate KS/AUC screening, then
greedy pruning of highly correlated columns, applied per feature group
first and then globally across the survivors."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from creditdyn.features import FeatureMatrix, GROUPS
from creditdyn.metrics import auc, ks, UndefinedMetricError

MIN_COMPLETE_PAIRS = 30  # below this, a pairwise correlation is treated as 0


class EmptySelectionError(ValueError):
    """No column survived selection; training cannot proceed."""


@dataclass(frozen=True)
class SelectionConfig:
    ks_min: float = 0.01
    auc_min: float = 0.53
    rho: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.ks_min <= 1.0:
            raise ValueError("ks_min must be in [0, 1]")
        if not 0.5 <= self.auc_min <= 1.0:
            raise ValueError("auc_min must be in [0.5, 1]")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must be in (0, 1]")


@dataclass
class SelectionReport:
    stage: str                      # "PER_GROUP" or "GLOBAL"
    kept: list
    dropped: list                   # (column, reason) pairs

    def reason_of(self, column: str) -> str | None:
        for col, reason in self.dropped:
            if col == column:
                return reason
        return None


@dataclass
class SelectionResult:
    """Audit trail of both stages plus the final kept column list."""
    stage_reports: list = field(default_factory=list)
    kept: list = field(default_factory=list)

    def write(self, path) -> None:
        lines = []
        for rep in self.stage_reports:
            lines.append(f"[stage {rep.stage}]")
            for col in rep.kept:
                lines.append(f"KEPT {col}")
            for col, reason in rep.dropped:
                lines.append(f"DROPPED {col} {reason}")
        lines.append("[final]")
        lines += [f"KEPT {col}" for col in self.kept]
        data = "\n".join(lines) + "\n"
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)


def univariate_power(col: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(KS, oriented AUC) of one raw column against binary labels,
    missing rows excluded. Degenerate columns (all missing, constant, or
    leaving a single class) score (0, 0.5)."""
    ok = ~np.isnan(col)
    if ok.sum() == 0 or len(np.unique(labels[ok])) < 2:
        return 0.0, 0.5
    try:
        a = auc(col[ok], labels[ok])
        k = ks(col[ok], labels[ok])
    except UndefinedMetricError:
        return 0.0, 0.5
    return k, max(a, 1.0 - a)


def univariate_screen(matrix: FeatureMatrix, labels,
                      config: SelectionConfig = SelectionConfig()) -> SelectionReport:
    """Keep a column iff its univariate KS and oriented AUC both exceed
    the configured floors."""
    labels = np.asarray(labels)
    if matrix.n_cols == 0:
        raise ValueError("matrix has no columns")
    kept, dropped = [], []
    for j, name in enumerate(matrix.names):
        k, a = univariate_power(matrix.values[:, j], labels)
        if k <= config.ks_min:
            dropped.append((name, "LOW_KS"))
        elif a <= config.auc_min:
            dropped.append((name, "LOW_AUC"))
        else:
            kept.append(name)
    return SelectionReport(stage="PER_GROUP", kept=kept, dropped=dropped)


def pairwise_correlation(values: np.ndarray,
                         min_pairs: int = MIN_COMPLETE_PAIRS) -> np.ndarray:
    """Absolute Pearson correlation on pairwise-complete rows; pairs with
    fewer than ``min_pairs`` complete rows, or zero variance, score 0."""
    mask = (~np.isnan(values)).astype(np.float64)
    z = np.where(np.isnan(values), 0.0, values)
    n = mask.T @ mask
    sx = z.T @ mask
    sxy = z.T @ z
    sxx = (z * z).T @ mask
    with np.errstate(invalid="ignore", divide="ignore"):
        cov = n * sxy - sx * sx.T
        varx = n * sxx - sx ** 2
        denom = np.sqrt(varx * varx.T)
        r = np.abs(cov) / denom
    r[~np.isfinite(r)] = 0.0
    r[n < min_pairs] = 0.0
    return r


def correlation_prune(matrix: FeatureMatrix, labels,
                      config: SelectionConfig = SelectionConfig(),
                      stage: str = "PER_GROUP") -> SelectionReport:
    """Greedy pruning: repeatedly keep the remaining column with the
    highest predictive power (KS; ties by higher AUC, then name) and drop
    every remaining column correlated with it beyond rho."""
    labels = np.asarray(labels)
    power = [univariate_power(matrix.values[:, j], labels)
             for j in range(matrix.n_cols)]
    order = sorted(range(matrix.n_cols),
                   key=lambda j: (-power[j][0], -power[j][1], matrix.names[j]))
    corr = pairwise_correlation(matrix.values)
    kept, dropped = [], []
    alive = set(range(matrix.n_cols))
    for j in order:
        if j not in alive:
            continue
        kept.append(matrix.names[j])
        alive.discard(j)
        for other in sorted(alive):
            if corr[j, other] > config.rho:
                dropped.append((matrix.names[other],
                                f"CORRELATED_WITH({matrix.names[j]})"))
                alive.discard(other)
    return SelectionReport(stage=stage, kept=kept, dropped=dropped)


def two_stage_select(matrix: FeatureMatrix, labels,
                     config: SelectionConfig = SelectionConfig()) -> SelectionResult:
    """Stage 1: screen + prune within each feature group independently.
    Stage 2: prune across the union of stage-1 survivors."""
    labels = np.asarray(labels)
    result = SelectionResult()
    survivors = []
    for group in GROUPS:
        names = [n for n, g in zip(matrix.names, matrix.groups) if g == group]
        if not names:
            continue
        sub = matrix.select_columns(names)
        screened = univariate_screen(sub, labels, config)
        if screened.kept:
            pruned = correlation_prune(sub.select_columns(screened.kept),
                                       labels, config, stage="PER_GROUP")
        else:
            pruned = SelectionReport(stage="PER_GROUP", kept=[], dropped=[])
        report = SelectionReport(stage="PER_GROUP",
                                 kept=pruned.kept,
                                 dropped=screened.dropped + pruned.dropped)
        result.stage_reports.append(report)
        survivors += pruned.kept
    if not survivors:
        raise EmptySelectionError("no column survived per-group selection")
    final = correlation_prune(matrix.select_columns(survivors), labels,
                              config, stage="GLOBAL")
    result.stage_reports.append(final)
    result.kept = [n for n in matrix.names if n in set(final.kept)]
    if not result.kept:
        raise EmptySelectionError("no column survived global pruning")
    return result
