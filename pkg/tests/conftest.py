"""Shared fixtures: a small deterministic synthetic population reused by
feature, selection and study tests."""

import numpy as np
import pytest

from creditdyn.synthpop import PopulationConfig, generate_population

# Small enough to generate in well under a second; origination is pinned
# to month 1 so a 16-month horizon still leaves room for the 12-month
# label window at early snapshot months.
SMALL_CONFIG = PopulationConfig(n_persons=1200, n_companies=250,
                                cohort_persons=400, cohort_companies=120,
                                horizon_months=16, origination_window=(1, 1),
                                seed=11)


@pytest.fixture(scope="session")
def small_population():
    return generate_population(SMALL_CONFIG)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
