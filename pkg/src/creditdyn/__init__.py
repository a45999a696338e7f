"""creditdyn: dynamics of credit scoring performance on multi-source credit data.

A research framework that generates a seeded synthetic population of
borrowers (persons and companies) with monthly repayment behavior and two
social networks, engineers financial / repayment-history / network feature
groups, and benchmarks gradient-boosted scorecards month by month after
loan granting, including grouped Shapley importance of the network
features.
"""

from creditdyn.metrics import auc, ks, make_folds, paired_ttest
from creditdyn.graphs import SocialGraph, node_stats, pagerank, hits, articulation_points
from creditdyn.synthpop import PopulationConfig, generate_population
from creditdyn.features import FeatureMatrix, FeatureBuilder
from creditdyn.selection import SelectionConfig, two_stage_select
from creditdyn.boosting import HyperParams, GridSpec, BoostedModel, train, grid_search
from creditdyn.shapley import tree_shap, group_importance
from creditdyn.study import StudyConfig, build_snapshots, run_study, lowess, minmax_scale

__version__ = "0.1.0"
