"""Command-line entry point: generate | features | study | explain,
driven by a TOML config with flag and environment overrides.

Precedence for the seed and the output directory: command-line flag,
then CREDITDYN_SEED / CREDITDYN_OUT, then the config file, then the
built-in default. All outputs are written atomically (temp + rename)
and every command exits nonzero with a one-line error on failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import tempfile
try:
    import tomllib
except ModuleNotFoundError:          # Python < 3.11
    import tomli as tomllib

import numpy as np

from creditdyn.boosting import BoostedModel, GridSpec, HyperParams, TrainingError
from creditdyn.features import (AssemblyError, BORROWER_GROUPS, FeatureBuilder,
                                FeatureMatrix, GROUPS)
from creditdyn.graphs import SocialGraph
from creditdyn.selection import EmptySelectionError, SelectionConfig
from creditdyn.shapley import explanation_sample, shap_values
from creditdyn.study import (EXPERIMENT_GROUPS, StudyConfig, _cell_matrix,
                             build_snapshots, run_study, write_report)
from creditdyn.synthpop import (BorrowerPanel, ConfigurationError,
                                PopulationConfig, generate_population)

PANEL_FILE = "panel.csv"
EOWNET_FILE = "eownet.csv"
FAMILYNET_FILE = "familynet.csv"
COHORT_FILE = "cohort.csv"


class CliError(Exception):
    """Fatal, user-facing; rendered as a one-line error message."""


@dataclasses.dataclass
class RunConfig:
    out_dir: str = "out"
    panel_path: str | None = None
    eownet_path: str | None = None
    familynet_path: str | None = None
    cohort_path: str | None = None
    seed: int = 42
    threads: int = 0               # 0 = available cores
    population: PopulationConfig = PopulationConfig()
    study: StudyConfig = StudyConfig()
    feature_months: tuple = tuple(range(1, 13))
    explain_sample_max: int = 2000

    def resolved(self, name: str, default: str) -> str:
        explicit = getattr(self, name)
        return explicit if explicit else os.path.join(self.out_dir, default)


def _dataclass_from_table(cls, table: dict, section: str, **fixed):
    """Build a (frozen) dataclass from a TOML table, rejecting unknown
    keys with the section name in the message."""
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - allowed
    if unknown:
        raise CliError(f"config section [{section}]: unknown key(s) "
                       f"{sorted(unknown)}")
    values = dict(table)
    for key in ("months", "experiments", "loan_term_months_range",
                "origination_window"):
        if key in values and isinstance(values[key], list):
            values[key] = tuple(values[key])
    values.update(fixed)
    try:
        return cls(**values)
    except (ValueError, ConfigurationError, TypeError) as e:
        raise CliError(f"config section [{section}]: {e}") from None


def load_config(path: str | None, seed_flag, threads_flag, out_flag) -> RunConfig:
    table: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise CliError(f"config file not found: {path}")
        with open(path, "rb") as f:
            try:
                table = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise CliError(f"config file {path}: {e}") from None

    run = table.get("run", {})
    unknown = set(run) - {"out_dir", "panel", "eownet", "familynet", "cohort",
                          "seed", "threads", "feature_months",
                          "explain_sample_max"}
    if unknown:
        raise CliError(f"config section [run]: unknown key(s) {sorted(unknown)}")

    seed = run.get("seed", 42)
    if os.environ.get("CREDITDYN_SEED"):
        try:
            seed = int(os.environ["CREDITDYN_SEED"])
        except ValueError:
            raise CliError("CREDITDYN_SEED must be an integer") from None
    if seed_flag is not None:
        seed = seed_flag

    out_dir = run.get("out_dir", "out")
    if os.environ.get("CREDITDYN_OUT"):
        out_dir = os.environ["CREDITDYN_OUT"]
    if out_flag is not None:
        out_dir = out_flag

    threads = threads_flag if threads_flag is not None else run.get("threads", 0)
    if threads < 0:
        raise CliError("--threads must be >= 0")

    population = _dataclass_from_table(PopulationConfig,
                                       table.get("population", {}),
                                       "population", seed=seed)
    selection = _dataclass_from_table(SelectionConfig,
                                      table.get("selection", {}), "selection")
    grid_table = table.get("grid", {})
    grid_kwargs = {}
    for toml_key, field_name in (("n_trees", "n_trees_choices"),
                                 ("learning_rate", "learning_rate_choices"),
                                 ("min_data_in_leaf", "min_data_in_leaf_choices")):
        if toml_key in grid_table:
            grid_kwargs[field_name] = tuple(grid_table.pop(toml_key))
    if grid_table:
        raise CliError(f"config section [grid]: unknown key(s) "
                       f"{sorted(grid_table)}")
    grid = GridSpec(**grid_kwargs) if grid_kwargs else StudyConfig().grid

    n_workers = threads if threads > 0 else (os.cpu_count() or 1)
    study = _dataclass_from_table(StudyConfig, table.get("study", {}), "study",
                                  seed=seed, selection=selection, grid=grid,
                                  n_workers=n_workers)

    months = run.get("feature_months", list(study.months))
    return RunConfig(out_dir=out_dir,
                     panel_path=run.get("panel"),
                     eownet_path=run.get("eownet"),
                     familynet_path=run.get("familynet"),
                     cohort_path=run.get("cohort"),
                     seed=seed, threads=threads,
                     population=population, study=study,
                     feature_months=tuple(months),
                     explain_sample_max=run.get("explain_sample_max", 2000))


# -- atomic output helpers ------------------------------------------------

def _atomic(path: str, writer) -> None:
    """Run ``writer(tmp_path)`` and move the result into place."""
    target_dir = os.path.dirname(os.path.abspath(path))
    os.makedirs(target_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=target_dir, suffix=".part")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_text(path: str, data: str) -> None:
    _atomic(path, lambda tmp: open(tmp, "w").write(data))


# -- artifact loading -----------------------------------------------------

def _require(path: str, role: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"{role} file not found: {path} "
                       f"(run the generate command or point the config at it)")
    return path


def load_artifacts(config: RunConfig):
    panel_path = _require(config.resolved("panel_path", PANEL_FILE), "panel")
    try:
        panel = BorrowerPanel.from_csv(panel_path)
    except ValueError as e:
        raise CliError(str(e)) from None
    kinds = panel.node_kinds
    graphs = {}
    for name, attr, default in (("eownet", "eownet_path", EOWNET_FILE),
                                ("familynet", "familynet_path", FAMILYNET_FILE)):
        gpath = _require(config.resolved(attr, default), name)
        try:
            graphs[name] = SocialGraph.from_csv(gpath, panel.node_ids, kinds)
        except ValueError as e:
            raise CliError(f"{gpath}: {e}") from None
    cohort_path = _require(config.resolved("cohort_path", COHORT_FILE), "cohort")
    with open(cohort_path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != "borrower_id":
        raise CliError(f"{cohort_path}: expected 'borrower_id' header at line 1")
    cohort = np.array(lines[1:], dtype=object)
    unknown = [b for b in cohort if b not in panel._index]
    if unknown:
        line = lines.index(unknown[0]) + 1
        raise CliError(f"{cohort_path}: unknown borrower {unknown[0]!r} "
                       f"at line {line}")
    return panel, graphs["eownet"], graphs["familynet"], cohort


# -- commands -------------------------------------------------------------

def cmd_generate(config: RunConfig) -> int:
    try:
        result = generate_population(config.population)
    except ConfigurationError as e:
        raise CliError(f"population config: {e}") from None
    os.makedirs(config.out_dir, exist_ok=True)
    _atomic(config.resolved("panel_path", PANEL_FILE), result.panel.to_csv)
    _atomic(config.resolved("eownet_path", EOWNET_FILE), result.eownet.to_csv)
    _atomic(config.resolved("familynet_path", FAMILYNET_FILE),
            result.familynet.to_csv)
    _write_text(config.resolved("cohort_path", COHORT_FILE),
                "borrower_id\n" + "\n".join(map(str, result.cohort_ids)) + "\n")
    print(f"generated {result.panel.n_nodes} nodes "
          f"({len(result.cohort_ids)} cohort) over "
          f"{result.panel.horizon} months into {config.out_dir}")
    return 0


def cmd_features(config: RunConfig) -> int:
    panel, eownet, familynet, cohort = load_artifacts(config)
    builder = FeatureBuilder(panel, eownet, familynet)
    try:
        snapshots = build_snapshots(panel, cohort, months=config.feature_months,
                                    outcome_window=config.study.outcome_window)
    except ValueError as e:
        raise CliError(str(e)) from None
    for snap in snapshots:
        idx = np.array([panel.index_of(b) for b in snap.borrower_ids])
        try:
            matrix = _cell_matrix(builder, idx, snap.obs_months, GROUPS)
        except AssemblyError as e:
            raise CliError(f"month {snap.month_since_grant}: {e}") from None
        path = os.path.join(config.out_dir,
                            f"features_m{snap.month_since_grant:02d}.csv")
        _atomic(path, matrix.to_csv)
        print(f"wrote {path}: {matrix.n_rows} rows x {matrix.n_cols} columns")
    return 0


def cmd_study(config: RunConfig) -> int:
    panel, eownet, familynet, cohort = load_artifacts(config)
    try:
        report = run_study(panel, eownet, familynet, cohort, config.study,
                           out_dir=config.out_dir)
    except (ValueError, TrainingError) as e:
        raise CliError(str(e)) from None
    write_report(report, config.out_dir)
    n_ok = sum(1 for c in report.cells.values() if not hasattr(c, "reason"))
    print(f"study complete: {n_ok}/{len(report.cells)} cells succeeded; "
          f"report in {config.out_dir}")
    return 0


def cmd_explain(config: RunConfig, model_path: str, features_path: str) -> int:
    _require(model_path, "model")
    _require(features_path, "features")
    try:
        model = BoostedModel.load(model_path)
    except ValueError as e:
        raise CliError(f"{model_path}: {e}") from None
    try:
        matrix = FeatureMatrix.from_csv(features_path)
    except ValueError as e:
        raise CliError(str(e)) from None
    missing = [c for c in model.columns if c not in matrix.names]
    if missing:
        raise CliError(f"{features_path}: missing model column(s) "
                       f"{missing[:5]}")
    matrix = matrix.select_columns(model.columns)
    X = matrix.values
    ids = matrix.row_ids
    if X.shape[0] > config.explain_sample_max:
        pick = explanation_sample(ids, config.explain_sample_max, config.seed)
        X = X[pick]
    phi = np.abs(shap_values(model, X)).mean(axis=0)
    total = float(phi.sum())
    group_of = dict(zip(matrix.names, matrix.groups))
    lines = ["column,group,mean_abs_attribution,share"]
    for j, name in enumerate(model.columns):
        share = float(phi[j]) / total if total > 0 else float("nan")
        lines.append(f"{name},{group_of[name]},{float(phi[j])!r},{share!r}")
    borrower = float(sum(phi[j] for j, n in enumerate(model.columns)
                         if group_of[n] in BORROWER_GROUPS))
    b_share = borrower / total if total > 0 else float("nan")
    n_share = 1.0 - b_share if total > 0 else float("nan")
    lines.append(f"_GROUP_BORROWER,,{borrower!r},{b_share!r}")
    lines.append(f"_GROUP_NETWORK,,{total - borrower!r},{n_share!r}")
    out_path = os.path.join(config.out_dir, "explain.csv")
    _write_text(out_path, "\n".join(lines) + "\n")
    print(f"wrote {out_path} ({X.shape[0]} rows explained)")
    return 0


# -- argument parsing -----------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML configuration file")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override the random seed")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker pool cap for parallel stages "
                             "(0 = available cores)")
    common.add_argument("--out", metavar="DIR",
                        help="output directory")

    parser = argparse.ArgumentParser(
        prog="creditdyn",
        description="Month-by-month credit scoring dynamics on seeded "
                    "synthetic data.",
        parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common],
                   help="generate the synthetic population and networks")
    sub.add_parser("features", parents=[common],
                   help="write per-month feature matrices")
    sub.add_parser("study", parents=[common],
                   help="run the full experiment study and write the report")
    p_explain = sub.add_parser("explain", parents=[common],
                               help="write a SHAP group-importance CSV "
                                    "for a saved model")
    p_explain.add_argument("--model", required=True, metavar="PATH",
                           help="saved model file")
    p_explain.add_argument("--features", required=True, metavar="PATH",
                           help="feature matrix CSV to explain")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.seed, args.threads, args.out)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "features":
            return cmd_features(config)
        if args.command == "study":
            return cmd_study(config)
        return cmd_explain(config, args.model, args.features)
    except CliError as e:
        print(f"creditdyn: error: {' '.join(str(e).split())}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
