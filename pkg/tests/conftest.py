import numpy as np
import pytest

from causal_testbed.covariates import desk_schema, generate_covariates


@pytest.fixture(scope="session")
def desk_table():
    return generate_covariates(desk_schema(), 1000, seed=11)


@pytest.fixture(scope="session")
def desk_design(desk_table):
    return desk_table.standardized()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
