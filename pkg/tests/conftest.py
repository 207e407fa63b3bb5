import numpy as np
import pytest

from trajood.predictors import AnalyticPredictor, GaussianMixtureDataModel
from trajood.schedule import make_linear_schedule


@pytest.fixture(scope="session")
def schedule():
    return make_linear_schedule()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def standard_normal_model(shape=(1, 8, 8)):
    return GaussianMixtureDataModel(np.ones(1), np.zeros((1, *shape)), np.ones(1))


def random_mixture(rng, K, shape=(1, 8, 8), spread=1.0):
    w = rng.uniform(0.5, 1.5, K)
    return GaussianMixtureDataModel(w / w.sum(), rng.normal(0, spread, (K, *shape)),
                                    rng.uniform(0.3, 1.2, K))


@pytest.fixture
def std_normal_predictor(schedule):
    return AnalyticPredictor(standard_normal_model(), schedule)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
