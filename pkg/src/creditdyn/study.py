"""Study orchestration: builds the 12 monthly snapshots with forward
default labels, runs the E1/E2/E3 experiments per month (30/70 split,
per-cell selection and grid search on the tuning partition, borrower-
aligned 10-fold CV on the rest), compares cells month-over-month and
experiment-over-experiment, and emits the report series, including a
LOWESS importance trend and a min-max-scaled overlay."""

from __future__ import annotations

import json
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from creditdyn.boosting import (BoostedModel, GridSpec, HyperParams,
                                TrainingError, grid_search, train)
from creditdyn.features import (BORROWER_GROUPS, FeatureBuilder, FeatureMatrix,
                                GROUPS)
from creditdyn.graphs import SocialGraph
from creditdyn.metrics import (ComparisonResult, CvResult,
                               UndefinedMetricError, auc, ks, make_folds,
                               paired_ttest)
from creditdyn.selection import (EmptySelectionError, SelectionConfig,
                                 two_stage_select)
from creditdyn.shapley import GroupImportance, explanation_sample, shap_values
from creditdyn.synthpop import BorrowerPanel, DEFAULT_BUCKET

EXPERIMENT_GROUPS = {
    "E1": ["FIN"],
    "E2": ["FIN", "FIN_HIST"],
    "E3": list(GROUPS),
}


# -- smoothing / scaling helpers -----------------------------------------

def lowess(x, y, frac: float = 0.6) -> np.ndarray:
    """Tricube-weighted local linear fit at each x over the frac-nearest
    neighbors; no robustness iterations. Windows whose x values coincide
    fall back to the weighted mean."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 3:
        raise ValueError("lowess needs at least 3 points")
    if not 0.0 < frac <= 1.0:
        raise ValueError("frac must be in (0, 1]")
    r = min(n, max(2, int(math.ceil(frac * n))))
    out = np.empty(n)
    for i in range(n):
        d = np.abs(x - x[i])
        h = np.partition(d, r - 1)[r - 1]
        if h == 0.0:
            w = (d == 0.0).astype(float)
        else:
            w = np.clip(d / h, 0.0, 1.0)
            w = (1.0 - w ** 3) ** 3
        sw = w.sum()
        xm = (w * x).sum() / sw
        ym = (w * y).sum() / sw
        sxx = (w * (x - xm) ** 2).sum()
        if sxx <= 1e-12 * max(1.0, (w * x * x).sum()):
            out[i] = ym
        else:
            beta = (w * (x - xm) * (y - ym)).sum() / sxx
            out[i] = ym + beta * (x[i] - xm)
    return out


def minmax_scale(series) -> np.ndarray:
    """(v - min) / (max - min); a constant series maps to all zeros."""
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("series must be non-empty")
    lo, hi = np.nanmin(series), np.nanmax(series)
    if hi == lo:
        return np.zeros_like(series)
    return (series - lo) / (hi - lo)


# -- snapshots -----------------------------------------------------------

@dataclass
class Snapshot:
    month_since_grant: int
    borrower_ids: np.ndarray
    labels: np.ndarray          # bool, True = DEFAULTER
    obs_months: np.ndarray      # calendar month per borrower

    @property
    def n(self) -> int:
        return len(self.borrower_ids)

    @property
    def default_rate(self) -> float:
        return float(self.labels.mean()) if self.n else float("nan")


def build_snapshots(panel: BorrowerPanel, cohort_ids, months=range(1, 13),
                    outcome_window: int = 12) -> list:
    """Snapshot i holds cohort members observed i months after their first
    loan was granted who are not yet 90+ DPD and still hold an active
    credit relationship (active loan or any positive debt); the label
    marks whoever reaches 90+ within the following outcome window."""
    cohort_ids = np.asarray(cohort_ids, dtype=object)
    idx = np.array([panel.index_of(b) for b in cohort_ids])
    orig = panel.origination_month(idx)
    if (orig == 0).any():
        missing = cohort_ids[orig == 0][:3]
        raise ValueError(f"cohort members without a loan: {list(missing)}")
    exposure = panel.total_debt()[idx] + panel.revolving[idx]
    snapshots = []
    for i in months:
        obs = orig + i - 1
        horizon_needed = int(obs.max()) + outcome_window
        if horizon_needed > panel.horizon:
            raise ValueError(
                f"snapshot month {i} needs panel months through "
                f"{horizon_needed}, horizon is {panel.horizon}")
        rows = np.arange(len(idx))
        dpd_at_obs = panel.dpd[idx, obs - 1]
        has_relationship = panel.active_loan[idx, obs - 1] | (exposure[rows, obs - 1] > 0)
        keep = (dpd_at_obs != DEFAULT_BUCKET) & has_relationship
        window_cols = (obs - 1)[:, None] + 1 + np.arange(outcome_window)
        labels = (panel.dpd[idx[:, None], window_cols] == DEFAULT_BUCKET).any(axis=1)
        snapshots.append(Snapshot(month_since_grant=i,
                                  borrower_ids=cohort_ids[keep],
                                  labels=labels[keep],
                                  obs_months=obs[keep]))
    return snapshots


# -- study configuration and report shapes -------------------------------

@dataclass(frozen=True)
class StudyConfig:
    seed: int = 42
    months: tuple = tuple(range(1, 13))
    experiments: tuple = ("E1", "E2", "E3")
    tuning_fraction: float = 0.3
    cv_folds: int = 10
    grid: GridSpec = GridSpec(n_trees_choices=(50, 100),
                              learning_rate_choices=(0.1,),
                              min_data_in_leaf_choices=(50, 100))
    grid_cv_folds: int = 3
    base_params: HyperParams = HyperParams()
    selection: SelectionConfig = SelectionConfig()
    shap_sample_max: int = 2000
    outcome_window: int = 12
    export_models: bool = False
    n_workers: int = 1


@dataclass
class CellResult:
    experiment: str
    month: int
    n_rows: int
    n_defaulters: int
    selected_columns: list
    params: HyperParams
    cv: CvResult
    importance: list | None = None      # per-fold GroupImportance (E3)
    grid_table: list = field(default_factory=list)


@dataclass
class FailedCell:
    experiment: str
    month: int
    reason: str


@dataclass
class Comparison:
    kind: str            # "month" or "experiment"
    experiment: str      # for month comparisons: the experiment
    month: int           # for month comparisons: the later month
    baseline: str        # earlier month or baseline experiment
    metric: str          # "KS" | "AUC"
    result: ComparisonResult


@dataclass
class ExperimentReport:
    config: StudyConfig
    snapshot_sizes: dict
    cells: dict                       # (experiment, month) -> CellResult | FailedCell
    comparisons: list = field(default_factory=list)
    importance_trend: dict = field(default_factory=dict)  # month -> smoothed net share

    def cell(self, experiment: str, month: int):
        return self.cells.get((experiment, month))

    def ok_cell(self, experiment: str, month: int):
        c = self.cells.get((experiment, month))
        return c if isinstance(c, CellResult) else None

    def comparison(self, kind, experiment, month, baseline, metric):
        for c in self.comparisons:
            if (c.kind, c.experiment, c.month, c.baseline, c.metric) == \
               (kind, experiment, month, baseline, metric):
                return c
        return None


# -- study execution -----------------------------------------------------

def _warm_kernels() -> None:
    """Force one compilation of every jitted kernel before any worker
    thread runs; concurrent first-call compilation is not safe."""
    rng = np.random.default_rng(0)
    X = rng.normal(size=(64, 3))
    y = (rng.random(64) < 0.5).astype(np.float64)
    model = train(X, y, HyperParams(n_trees=2, min_data_in_leaf=5))
    model.predict_margin(X[:4])
    shap_values(model, X[:4])


def tuning_split(borrower_ids, labels, fraction: float, seed: int) -> np.ndarray:
    """Deterministic label-stratified split; True marks the tuning
    partition. Performed once at cohort level and reused everywhere."""
    labels = np.asarray(labels, dtype=bool)
    rng = np.random.default_rng(seed)
    is_tuning = np.zeros(len(borrower_ids), dtype=bool)
    for value in (False, True):
        stratum = np.flatnonzero(labels == value)
        take = int(round(fraction * stratum.size))
        picked = rng.permutation(stratum)[:take]
        is_tuning[picked] = True
    return is_tuning


def _cell_matrix(builder, idx, obs_months, groups) -> FeatureMatrix:
    """Feature matrix for a snapshot whose borrowers may sit at different
    calendar months: build per distinct month, then reassemble rows in the
    original order."""
    obs_months = np.asarray(obs_months)
    uniq = np.unique(obs_months)
    if uniq.size == 1:
        return builder.build(idx, int(uniq[0]), groups)
    parts = {int(m): builder.build(idx[obs_months == m], int(m), groups)
             for m in uniq}
    first = parts[int(uniq[0])]
    values = np.empty((len(idx), first.n_cols))
    row_ids = np.empty(len(idx), dtype=object)
    for m, part in parts.items():
        where = np.flatnonzero(obs_months == m)
        values[where] = part.values
        row_ids[where] = part.row_ids
    return FeatureMatrix(row_ids, list(first.names), list(first.groups), values)


def _run_cell(experiment, month, snapshot, builder, cohort_index,
              tuning_ids, config, out_dir=None):
    groups = EXPERIMENT_GROUPS[experiment]
    idx = np.array([cohort_index[b] for b in snapshot.borrower_ids])
    matrix = _cell_matrix(builder, idx, snapshot.obs_months, groups)
    labels = snapshot.labels.astype(np.float64)
    in_tuning = np.isin(snapshot.borrower_ids, tuning_ids)

    tune = matrix.select_rows(in_tuning)
    tune_labels = labels[in_tuning]
    selection = two_stage_select(tune, tune_labels, config.selection)
    kept = selection.kept

    X_tune = tune.select_columns(kept).values
    params, grid_table = grid_search(X_tune, tune_labels, config.grid,
                                     k=config.grid_cv_folds, seed=config.seed,
                                     row_ids=tune.row_ids,
                                     base=config.base_params)

    eval_rows = matrix.select_rows(~in_tuning).select_columns(kept)
    y = labels[~in_tuning]
    folds = make_folds(eval_rows.row_ids, config.cv_folds, config.seed)
    fold_ks, fold_auc, importances = [], [], []
    for f in range(config.cv_folds):
        test = folds == f
        model = train(eval_rows.values[~test], y[~test], params, columns=kept)
        scores = model.predict_margin(eval_rows.values[test])
        fold_ks.append(ks(scores, y[test]))
        fold_auc.append(auc(scores, y[test]))
        if experiment == "E3":
            borrower_cols = [c for c, g in zip(eval_rows.names, eval_rows.groups)
                             if g in BORROWER_GROUPS]
            Xf = eval_rows.values[test]
            ids_f = eval_rows.row_ids[test]
            if Xf.shape[0] > config.shap_sample_max:
                pick = explanation_sample(ids_f, config.shap_sample_max, config.seed)
                Xf = Xf[pick]
            phi = np.abs(shap_values(model, Xf)).mean(axis=0)
            total = float(phi.sum())
            if total == 0.0:
                importances.append(GroupImportance(float("nan"), float("nan"),
                                                   defined=False))
            else:
                mask = np.array([c in set(borrower_cols) for c in kept])
                b = float(phi[mask].sum()) / total
                importances.append(GroupImportance(b, 1.0 - b))
    cv = CvResult(fold_ks=fold_ks, fold_auc=fold_auc,
                  fold_assignment_id=f"hash-seed{config.seed}-k{config.cv_folds}")

    if config.export_models and out_dir is not None:
        model = train(eval_rows.values, y, params, columns=kept)
        model.save(os.path.join(out_dir, f"model_{experiment}_m{month:02d}.txt"))
        selection.write(os.path.join(out_dir,
                                     f"selection_{experiment}_m{month:02d}.txt"))

    return CellResult(experiment=experiment, month=month,
                      n_rows=snapshot.n, n_defaulters=int(snapshot.labels.sum()),
                      selected_columns=kept, params=params, cv=cv,
                      importance=importances if experiment == "E3" else None,
                      grid_table=[(r.params.n_trees, r.params.learning_rate,
                                   r.params.min_data_in_leaf, r.mean_auc)
                                  for r in grid_table])


def run_study(panel: BorrowerPanel, eownet: SocialGraph, familynet: SocialGraph,
              cohort_ids, config: StudyConfig = StudyConfig(),
              out_dir=None) -> ExperimentReport:
    """Run every (experiment, month) cell and fill all comparisons.
    Deterministic for a fixed config; failed cells are recorded, not
    dropped."""
    cohort_ids = np.asarray(cohort_ids, dtype=object)
    snapshots = build_snapshots(panel, cohort_ids, months=config.months,
                                outcome_window=config.outcome_window)
    snap_by_month = {s.month_since_grant: s for s in snapshots}

    # cohort-level 30/70 split, stratified on the month-1 outcome label
    idx = np.array([panel.index_of(b) for b in cohort_ids])
    orig = panel.origination_month(idx)
    window_cols = (orig - 1)[:, None] + 1 + np.arange(config.outcome_window)
    window_cols = np.minimum(window_cols, panel.horizon - 1)
    strat_label = (panel.dpd[idx[:, None], window_cols] == DEFAULT_BUCKET).any(axis=1)
    is_tuning = tuning_split(cohort_ids, strat_label, config.tuning_fraction,
                             config.seed)
    tuning_ids = cohort_ids[is_tuning]

    builder = FeatureBuilder(panel, eownet, familynet)
    cohort_index = {b: panel.index_of(b) for b in panel.node_ids}

    tasks = [(e, m) for e in config.experiments for m in config.months]

    def compute(task):
        e, m = task
        try:
            return task, _run_cell(e, m, snap_by_month[m], builder,
                                   cohort_index, tuning_ids, config, out_dir)
        except (EmptySelectionError, TrainingError, UndefinedMetricError,
                ValueError) as err:
            return task, FailedCell(experiment=e, month=m, reason=str(err))

    if config.n_workers > 1:
        _warm_kernels()
        # warm the per-month caches serially: the builder caches are not
        # synchronized, and every cell of a month shares them
        for m in config.months:
            snapshot = snap_by_month[m]
            i0 = np.array([cohort_index[b] for b in snapshot.borrower_ids])
            _cell_matrix(builder, i0, snapshot.obs_months, EXPERIMENT_GROUPS["E3"])
        with ThreadPoolExecutor(max_workers=config.n_workers) as pool:
            results = list(pool.map(compute, tasks))
    else:
        results = [compute(t) for t in tasks]

    report = ExperimentReport(
        config=config,
        snapshot_sizes={s.month_since_grant: (s.n, s.default_rate)
                        for s in snapshots},
        cells={task: cell for task, cell in results})
    compare(report)
    return report


def compare(report: ExperimentReport) -> ExperimentReport:
    """Fill consecutive-month and experiment-over-experiment comparisons
    (paired t-tests over aligned folds, for both KS and AUC). The
    relative-increment denominator is the earlier month / the smaller
    feature set."""
    config = report.config
    report.comparisons = []
    months = list(config.months)
    for e in config.experiments:
        for a, b in zip(months, months[1:]):
            ca, cb = report.ok_cell(e, a), report.ok_cell(e, b)
            if ca is None or cb is None:
                continue
            for metric, fa, fb in (("KS", ca.cv.fold_ks, cb.cv.fold_ks),
                                   ("AUC", ca.cv.fold_auc, cb.cv.fold_auc)):
                report.comparisons.append(Comparison(
                    kind="month", experiment=e, month=b, baseline=str(a),
                    metric=metric, result=paired_ttest(fa, fb)))
    pairs = [(a, b) for a, b in (("E1", "E2"), ("E2", "E3"))
             if a in config.experiments and b in config.experiments]
    for base_e, new_e in pairs:
        for m in months:
            ca, cb = report.ok_cell(base_e, m), report.ok_cell(new_e, m)
            if ca is None or cb is None:
                continue
            for metric, fa, fb in (("KS", ca.cv.fold_ks, cb.cv.fold_ks),
                                   ("AUC", ca.cv.fold_auc, cb.cv.fold_auc)):
                report.comparisons.append(Comparison(
                    kind="experiment", experiment=new_e, month=m,
                    baseline=base_e, metric=metric, result=paired_ttest(fa, fb)))

    # smoothed network-importance trend over months (E3)
    xs, ys = [], []
    for m in months:
        c = report.ok_cell("E3", m)
        if c is not None and c.importance:
            shares = [gi.network_share for gi in c.importance if gi.defined]
            if shares:
                xs.append(m)
                ys.append(float(np.mean(shares)))
    if len(xs) >= 3:
        smoothed = lowess(np.array(xs, dtype=float), np.array(ys), frac=0.6)
        report.importance_trend = {m: float(v) for m, v in zip(xs, smoothed)}
    return report


# -- report serialization -------------------------------------------------

def _atomic_write(path, data: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
    with os.fdopen(fd, "w") as f:
        f.write(data)
    os.replace(tmp, path)


def report_to_dict(report: ExperimentReport) -> dict:
    cells = {}
    for (e, m), cell in sorted(report.cells.items()):
        key = f"{e}/m{m:02d}"
        if isinstance(cell, FailedCell):
            cells[key] = {"failed": True, "reason": cell.reason}
            continue
        entry = {
            "n_rows": cell.n_rows,
            "n_defaulters": cell.n_defaulters,
            "selected_columns": cell.selected_columns,
            "params": {"n_trees": cell.params.n_trees,
                       "learning_rate": cell.params.learning_rate,
                       "min_data_in_leaf": cell.params.min_data_in_leaf,
                       "max_depth": cell.params.max_depth,
                       "l2_leaf_reg": cell.params.l2_leaf_reg},
            "fold_ks": cell.cv.fold_ks,
            "fold_auc": cell.cv.fold_auc,
            "mean_ks": cell.cv.mean_ks,
            "mean_auc": cell.cv.mean_auc,
            "grid": cell.grid_table,
        }
        if cell.importance is not None:
            entry["importance"] = [
                {"borrower_share": gi.borrower_share,
                 "network_share": gi.network_share,
                 "defined": gi.defined} for gi in cell.importance]
        cells[key] = entry
    comparisons = [{
        "kind": c.kind, "experiment": c.experiment, "month": c.month,
        "baseline": c.baseline, "metric": c.metric,
        "delta_mean": c.result.delta_mean,
        "relative_increment": c.result.relative_increment,
        "p_value": c.result.p_value,
        "significant": c.result.significant,
    } for c in report.comparisons]
    return {
        "seed": report.config.seed,
        "months": list(report.config.months),
        "experiments": list(report.config.experiments),
        "snapshots": {f"m{m:02d}": {"n": n, "default_rate": r}
                      for m, (n, r) in sorted(report.snapshot_sizes.items())},
        "cells": cells,
        "comparisons": comparisons,
        "importance_trend": {f"m{m:02d}": v
                             for m, v in sorted(report.importance_trend.items())},
    }


def write_report(report: ExperimentReport, out_dir) -> None:
    """Emit the machine-readable report plus the flat per-figure CSV
    series."""
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "report.json"),
                  json.dumps(report_to_dict(report), indent=2, sort_keys=True,
                             allow_nan=True) + "\n")

    months = list(report.config.months)

    def fmt(v):
        return "" if v is None or (isinstance(v, float) and np.isnan(v)) else repr(v)

    # fig3: per-experiment performance with consecutive-month increments
    lines = ["experiment,month,mean_ks,mean_auc,ks_increment,ks_p_value,"
             "ks_significant,auc_increment,auc_p_value,auc_significant"]
    for e in report.config.experiments:
        for m in months:
            cell = report.ok_cell(e, m)
            if cell is None:
                continue
            row = [e, str(m), repr(cell.cv.mean_ks), repr(cell.cv.mean_auc)]
            for metric in ("KS", "AUC"):
                comp = report.comparison("month", e, m, str(m - 1), metric)
                if comp is None:
                    row += ["", "", ""]
                else:
                    row += [fmt(comp.result.relative_increment),
                            repr(comp.result.p_value),
                            str(int(comp.result.significant))]
            lines.append(",".join(row))
    _atomic_write(os.path.join(out_dir, "fig3_performance.csv"),
                  "\n".join(lines) + "\n")

    # fig4 / fig5: experiment-over-experiment increments per month
    for fname, base_e, new_e in (("fig4_e2_vs_e1.csv", "E1", "E2"),
                                 ("fig5_e3_vs_e2.csv", "E2", "E3")):
        lines = ["month,metric,baseline_mean,new_mean,relative_increment,"
                 "p_value,significant"]
        for m in months:
            ca, cb = report.ok_cell(base_e, m), report.ok_cell(new_e, m)
            if ca is None or cb is None:
                continue
            for metric, va, vb in (("KS", ca.cv.mean_ks, cb.cv.mean_ks),
                                   ("AUC", ca.cv.mean_auc, cb.cv.mean_auc)):
                comp = report.comparison("experiment", new_e, m, base_e, metric)
                if comp is None:
                    continue
                lines.append(",".join([
                    str(m), metric, repr(va), repr(vb),
                    fmt(comp.result.relative_increment),
                    repr(comp.result.p_value),
                    str(int(comp.result.significant))]))
        _atomic_write(os.path.join(out_dir, fname), "\n".join(lines) + "\n")

    # fig6: per-fold grouped importance plus the smoothed trend
    lines = ["experiment,month,fold,borrower_share,network_share,smoothed_network_share"]
    for m in months:
        cell = report.ok_cell("E3", m)
        if cell is None or not cell.importance:
            continue
        sm = report.importance_trend.get(m)
        for f, gi in enumerate(cell.importance):
            lines.append(",".join([
                "E3", str(m), str(f), fmt(gi.borrower_share),
                fmt(gi.network_share), fmt(sm)]))
    _atomic_write(os.path.join(out_dir, "fig6_importance.csv"),
                  "\n".join(lines) + "\n")

    # fig7: min-max-scaled overlay of E3-vs-E2 increments and importance
    rows = []
    for m in months:
        comp_ks = report.comparison("experiment", "E3", m, "E2", "KS")
        comp_auc = report.comparison("experiment", "E3", m, "E2", "AUC")
        cell = report.ok_cell("E3", m)
        if comp_ks is None or comp_auc is None or cell is None \
                or not cell.importance:
            continue
        shares = [gi.network_share for gi in cell.importance if gi.defined]
        rows.append((m, comp_ks.result.relative_increment,
                     comp_auc.result.relative_increment,
                     float(np.mean(shares)) if shares else float("nan")))
    lines = ["month,ks_increment_scaled,auc_increment_scaled,"
             "network_importance_scaled"]
    if rows:
        arr = np.array([[r[1] for r in rows], [r[2] for r in rows],
                        [r[3] for r in rows]])
        scaled = np.stack([minmax_scale(s) for s in arr])
        for j, r in enumerate(rows):
            lines.append(",".join([str(r[0])] +
                                  [repr(float(scaled[i, j])) for i in range(3)]))
    _atomic_write(os.path.join(out_dir, "fig7_overlay.csv"),
                  "\n".join(lines) + "\n")
