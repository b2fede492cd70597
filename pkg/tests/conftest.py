import logging

import numpy as np
import pytest

from ipgn.problem import ModelProblem, ProblemConfig

logging.getLogger("ipgn.multigrid").setLevel(logging.ERROR)


@pytest.fixture(scope="session")
def problem8():
    """Small model problem with the default 5% noise."""
    return ModelProblem(8, ProblemConfig(seed=0))


@pytest.fixture(scope="session")
def problem16():
    return ModelProblem(16, ProblemConfig(seed=0))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
