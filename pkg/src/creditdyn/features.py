"""Feature engineering for a borrower cohort at an observation month:
financial situation (FIN), repayment history windows (FIN_HIST), network
node statistics (NODE_STATS) and egonet aggregates of the neighbors'
financials, current (SOC_INT) and windowed (SOC_INT_HIST).

Missing values are first-class (NaN in memory, empty CSV fields) and flow
into the model untouched."""

from __future__ import annotations

import os
import tempfile
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from creditdyn.graphs import SocialGraph, node_stats, NODE_STAT_COLUMNS
from creditdyn.synthpop import BorrowerPanel

GROUPS = ["FIN", "FIN_HIST", "NODE_STATS", "SOC_INT", "SOC_INT_HIST"]
_GROUP_RANK = {g: i for i, g in enumerate(GROUPS)}
BORROWER_GROUPS = {"FIN", "FIN_HIST"}
NETWORK_GROUPS = {"NODE_STATS", "SOC_INT", "SOC_INT_HIST"}

HIST_WINDOWS = (3, 6)

FIN_COLUMNS = [
    "fin_debt_consumer", "fin_debt_commercial", "fin_debt_mortgage",
    "fin_revolving", "fin_debt_total",
    "fin_ratio_consumer", "fin_ratio_commercial", "fin_ratio_mortgage",
    "fin_dpd_ordinal", "fin_dpd_current", "fin_dpd_1_29", "fin_dpd_30_59",
    "fin_dpd_60_89", "fin_dpd_90_plus", "fin_has_active_loan",
]


class AssemblyError(ValueError):
    pass


@dataclass
class FeatureMatrix:
    row_ids: np.ndarray
    names: list
    groups: list               # one group tag per column
    values: np.ndarray         # float64, NaN = MISSING

    def __post_init__(self):
        if len(self.names) != len(self.groups):
            raise AssemblyError("names/groups length mismatch")
        if len(set(self.names)) != len(self.names):
            dup = sorted({n for n in self.names if self.names.count(n) > 1})
            raise AssemblyError(f"duplicate column name(s): {dup}")
        unknown = set(self.groups) - set(GROUPS)
        if unknown:
            raise AssemblyError(f"unknown group tag(s): {sorted(unknown)}")
        if self.values.shape != (len(self.row_ids), len(self.names)):
            raise AssemblyError("values shape does not match rows/columns")

    @property
    def n_rows(self) -> int:
        return len(self.row_ids)

    @property
    def n_cols(self) -> int:
        return len(self.names)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def select_columns(self, names) -> "FeatureMatrix":
        idx = [self.names.index(n) for n in names]
        return FeatureMatrix(self.row_ids, [self.names[i] for i in idx],
                             [self.groups[i] for i in idx],
                             self.values[:, idx])

    def select_rows(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.row_ids[mask], list(self.names),
                             list(self.groups), self.values[mask])

    def sorted_columns(self) -> "FeatureMatrix":
        order = sorted(range(self.n_cols),
                       key=lambda i: (_GROUP_RANK[self.groups[i]], self.names[i]))
        return FeatureMatrix(self.row_ids, [self.names[i] for i in order],
                             [self.groups[i] for i in order],
                             self.values[:, order])

    @staticmethod
    def concat(parts) -> "FeatureMatrix":
        """Column-concatenation of matrices over identical rows, with
        stable (group, name) column ordering."""
        parts = list(parts)
        if not parts:
            raise AssemblyError("nothing to assemble")
        ids = parts[0].row_ids
        for p in parts[1:]:
            if not np.array_equal(p.row_ids, ids):
                raise AssemblyError("row id mismatch between feature blocks")
        names = [n for p in parts for n in p.names]
        groups = [g for p in parts for g in p.groups]
        values = np.concatenate([p.values for p in parts], axis=1)
        return FeatureMatrix(ids, names, groups, values).sorted_columns()

    # -- CSV interface ---------------------------------------------------

    def to_csv(self, path) -> None:
        lines = ["#groups," + ",".join(self.groups),
                 "borrower_id," + ",".join(self.names)]
        for i in range(self.n_rows):
            cells = ["" if np.isnan(v) else repr(float(v)) for v in self.values[i]]
            lines.append(str(self.row_ids[i]) + "," + ",".join(cells))
        data = "\n".join(lines) + "\n"
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)))
        with os.fdopen(fd, "w") as f:
            f.write(data)
        os.replace(tmp, path)

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        with open(path) as f:
            first = f.readline().rstrip("\n")
            if not first.startswith("#groups,"):
                raise ValueError(f"{path}: missing #groups metadata line")
            groups = first.split(",")[1:]
            df = pd.read_csv(f, dtype={"borrower_id": str})
        names = list(df.columns[1:])
        return cls(df["borrower_id"].to_numpy(dtype=object), names, groups,
                   df[names].to_numpy(dtype=float))


# -- vectorized builders -------------------------------------------------

def fin_matrix(panel: BorrowerPanel, node_idx: np.ndarray, month: int) -> np.ndarray:
    """FIN feature block (len(node_idx) x len(FIN_COLUMNS)) at one month."""
    m = month - 1
    dc = panel.debt_consumer[node_idx, m]
    dk = panel.debt_commercial[node_idx, m]
    dm = panel.debt_mortgage[node_idx, m]
    rev = panel.revolving[node_idx, m]
    total = dc + dk + dm
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = np.stack([dc, dk, dm], axis=1) / total[:, None]
    ratios[total == 0.0] = np.nan
    dpd = panel.dpd[node_idx, m].astype(np.float64)
    onehot = np.zeros((len(node_idx), 5))
    onehot[np.arange(len(node_idx)), dpd.astype(int)] = 1.0
    active = panel.active_loan[node_idx, m].astype(np.float64)
    return np.column_stack([dc, dk, dm, rev, total, ratios, dpd, onehot, active])


def window_stats(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population SD over the months axis of a
    (months, rows, cols) stack, skipping missing months; all-missing
    windows stay missing."""
    with np.errstate(invalid="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(stack, axis=0)
        sd = np.nanstd(stack, axis=0)  # ddof=0: a single point has SD 0
    return mean, sd


class FeatureBuilder:
    """Builds group-tagged feature matrices for a cohort, with per-month
    caches of node financials, node statistics and egonet aggregates
    shared across experiments."""

    def __init__(self, panel: BorrowerPanel, eownet: SocialGraph,
                 familynet: SocialGraph):
        if not np.array_equal(panel.node_ids, eownet.node_ids) or \
           not np.array_equal(panel.node_ids, familynet.node_ids):
            raise ValueError("panel and graphs must share one node universe")
        self.panel = panel
        self.eownet = eownet
        self.familynet = familynet
        self._fin_cache: dict[int, np.ndarray] = {}
        self._socint_cache: dict[int, np.ndarray] = {}
        self._stats_cache: dict = {}
        self._neighbors_cache: dict[int, tuple] = {}
        self._all_idx = np.arange(panel.n_nodes)

    # per-month primitives, cached over all nodes

    def fin_all(self, month: int) -> np.ndarray:
        if month not in self._fin_cache:
            self._fin_cache[month] = fin_matrix(self.panel, self._all_idx, month)
        return self._fin_cache[month]

    def neighbor_pairs(self, month: int) -> np.ndarray:
        """Unique (node, neighbor) pairs at this month across both
        networks, both edge directions, self excluded."""
        if month not in self._neighbors_cache:
            pairs = np.vstack([self.eownet.slice(month).undirected_pairs(),
                               self.familynet.slice(month).undirected_pairs()])
            both = np.vstack([pairs, pairs[:, ::-1]])
            self._neighbors_cache[month] = np.unique(both, axis=0)
        return self._neighbors_cache[month]

    def socint_all(self, month: int) -> np.ndarray:
        """SOC_INT block for every node: mean and SD of each neighbor's
        FIN feature over the distance-1 egonet (borrower excluded)."""
        if month not in self._socint_cache:
            fin = self.fin_all(month)
            pairs = self.neighbor_pairs(month)
            n = self.panel.n_nodes
            k = fin.shape[1]
            mean = np.full((n, k), np.nan)
            sd = np.full((n, k), np.nan)
            ego, nbr = pairs[:, 0], pairs[:, 1]
            for j in range(k):
                vals = fin[nbr, j]
                ok = ~np.isnan(vals)
                cnt = np.bincount(ego[ok], minlength=n)
                s = np.bincount(ego[ok], weights=vals[ok], minlength=n)
                s2 = np.bincount(ego[ok], weights=vals[ok] ** 2, minlength=n)
                with np.errstate(invalid="ignore", divide="ignore"):
                    mu = s / cnt
                    var = np.maximum(s2 / cnt - mu ** 2, 0.0)
                has = cnt > 0
                mean[has, j] = mu[has]
                sd[has, j] = np.sqrt(var[has])
            out = np.empty((n, 2 * k))
            out[:, 0::2] = mean
            out[:, 1::2] = sd
            self._socint_cache[month] = out
        return self._socint_cache[month]

    def stats_all(self, network: str, month: int) -> pd.DataFrame:
        graph = self.eownet if network == "eow" else self.familynet
        key = (network, month)
        # the family network is static: one slice serves every month
        if network == "fam":
            key = ("fam", 0)
        if key not in self._stats_cache:
            self._stats_cache[key] = node_stats(graph.slice(month))
        return self._stats_cache[key]

    # group builders for a cohort at one observation month

    def fin(self, cohort_idx: np.ndarray, month: int) -> FeatureMatrix:
        values = self.fin_all(month)[cohort_idx]
        return FeatureMatrix(self.panel.node_ids[cohort_idx], list(FIN_COLUMNS),
                             ["FIN"] * len(FIN_COLUMNS), values)

    def fin_hist(self, cohort_idx: np.ndarray, month: int,
                 windows=HIST_WINDOWS) -> FeatureMatrix:
        names, groups, blocks = [], [], []
        for w in windows:
            lo = max(1, month - w + 1)
            stack = np.stack([self.fin_all(m)[cohort_idx]
                              for m in range(lo, month + 1)])
            mean, sd = window_stats(stack)
            for j, base in enumerate(FIN_COLUMNS):
                names += [f"finh_{base}_m{w}_mean", f"finh_{base}_m{w}_sd"]
                blocks += [mean[:, j], sd[:, j]]
            names.append(f"finh_m{w}_months_available")
            blocks.append(np.full(len(cohort_idx), float(month - lo + 1)))
        groups = ["FIN_HIST"] * len(names)
        return FeatureMatrix(self.panel.node_ids[cohort_idx], names, groups,
                             np.column_stack(blocks))

    def node_statistics(self, cohort_idx: np.ndarray, month: int) -> FeatureMatrix:
        names, blocks = [], []
        is_person = self.panel.node_kinds[cohort_idx] == "person"
        for net in ("eow", "fam"):
            stats = self.stats_all(net, month).to_numpy(dtype=float)[cohort_idx]
            if net == "fam":
                # the family network only carries person relations
                stats = stats.copy()
                stats[~is_person] = np.nan
            for j, stat in enumerate(NODE_STAT_COLUMNS):
                names.append(f"node_{net}_{stat}")
                blocks.append(stats[:, j])
        return FeatureMatrix(self.panel.node_ids[cohort_idx], names,
                             ["NODE_STATS"] * len(names), np.column_stack(blocks))

    def _socint_names(self) -> list:
        names = []
        for base in FIN_COLUMNS:
            names += [f"soc_{base}_mean", f"soc_{base}_sd"]
        return names

    def socint(self, cohort_idx: np.ndarray, month: int) -> FeatureMatrix:
        values = self.socint_all(month)[cohort_idx]
        names = self._socint_names()
        return FeatureMatrix(self.panel.node_ids[cohort_idx], names,
                             ["SOC_INT"] * len(names), values)

    def socint_hist(self, cohort_idx: np.ndarray, month: int,
                    windows=HIST_WINDOWS) -> FeatureMatrix:
        soc_names = self._socint_names()
        names, blocks = [], []
        for w in windows:
            lo = max(1, month - w + 1)
            stack = np.stack([self.socint_all(m)[cohort_idx]
                              for m in range(lo, month + 1)])
            mean, sd = window_stats(stack)
            for j, base in enumerate(soc_names):
                names += [f"soch_{base}_m{w}_mean", f"soch_{base}_m{w}_sd"]
                blocks += [mean[:, j], sd[:, j]]
        return FeatureMatrix(self.panel.node_ids[cohort_idx], names,
                             ["SOC_INT_HIST"] * len(names),
                             np.column_stack(blocks))

    def build(self, cohort_idx: np.ndarray, month: int, groups) -> FeatureMatrix:
        """Assemble the requested feature groups for a cohort at one
        month, columns in stable (group, name) order."""
        groups = list(groups)
        if not groups:
            raise AssemblyError("no feature groups requested")
        unknown = set(groups) - set(GROUPS)
        if unknown:
            raise AssemblyError(f"unknown group(s) requested: {sorted(unknown)}")
        builders = {"FIN": self.fin, "FIN_HIST": self.fin_hist,
                    "NODE_STATS": self.node_statistics,
                    "SOC_INT": self.socint, "SOC_INT_HIST": self.socint_hist}
        return FeatureMatrix.concat(
            builders[g](cohort_idx, month) for g in GROUPS if g in groups)


# -- per-borrower convenience surface ------------------------------------

def fin_features(panel: BorrowerPanel, borrower, month: int) -> dict:
    """FIN columns for one borrower as a name->value mapping."""
    if month < 1 or month > panel.horizon:
        raise ValueError(f"borrower {borrower} not observed at month {month}")
    idx = np.array([panel.index_of(borrower)])
    row = fin_matrix(panel, idx, month)[0]
    return dict(zip(FIN_COLUMNS, row))


def fin_hist_features(panel: BorrowerPanel, borrower, month: int,
                      windows=HIST_WINDOWS) -> dict:
    """Windowed mean/SD of every FIN column for one borrower; the window
    includes the observation month and clips at the first observed
    month."""
    out = {}
    idx = np.array([panel.index_of(borrower)])
    for w in windows:
        lo = max(1, month - w + 1)
        stack = np.stack([fin_matrix(panel, idx, m)[0]
                          for m in range(lo, month + 1)])
        mean, sd = window_stats(stack[:, None, :])
        for j, base in enumerate(FIN_COLUMNS):
            out[f"finh_{base}_m{w}_mean"] = float(mean[0, j])
            out[f"finh_{base}_m{w}_sd"] = float(sd[0, j])
        out[f"finh_m{w}_months_available"] = float(month - lo + 1)
    return out


def socint_features(builder: FeatureBuilder, borrower, month: int) -> dict:
    """NODE_STATS plus SOC_INT columns for one borrower."""
    idx = np.array([builder.panel.index_of(borrower)])
    stats = builder.node_statistics(idx, month)
    soc = builder.socint(idx, month)
    out = dict(zip(stats.names, stats.values[0]))
    out.update(zip(soc.names, soc.values[0]))
    return out


def socint_hist_features(builder: FeatureBuilder, borrower, month: int,
                         windows=HIST_WINDOWS) -> dict:
    idx = np.array([builder.panel.index_of(borrower)])
    fm = builder.socint_hist(idx, month, windows)
    return dict(zip(fm.names, fm.values[0]))
