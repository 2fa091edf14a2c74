import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fpdm.schedule import make_linear_schedule
from fpdm.score import Condition, GaussianMixtureOracle, OracleBackend

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sched50():
    return make_linear_schedule(50)


@pytest.fixture(scope="session")
def sched200():
    return make_linear_schedule(200)


def separated_oracle(shape=(4, 4), sep=5.0, sigma=0.1, seed=0, prior=0.5):
    """Two classes whose means differ by ``sep`` standard deviations in every pixel."""
    rng = np.random.default_rng(seed)
    mu_h = rng.uniform(-0.5, 0.5, size=shape)
    mu_u = mu_h - sep * sigma
    return GaussianMixtureOracle(np.stack([mu_h, mu_u]), np.full((2, *shape), sigma ** 2),
                                 np.array([1 - prior, prior]))


class AffinePredictor:
    """Toy predictor ``eps = a_c * x + b_c * t / T`` with a distinct map per condition."""

    def __init__(self, shape, seed=0, T=50, same=False):
        rng = np.random.default_rng(seed)
        self.T = T
        base = (rng.normal(size=shape) * 0.3, rng.normal(size=shape) * 0.3)
        self.coef = {c: base if same else (rng.normal(size=shape) * 0.3, rng.normal(size=shape) * 0.3)
                     for c in Condition}
        self.calls = 0

    def predict(self, x_t, t, condition):
        self.calls += 1
        a, b = self.coef[Condition(condition)]
        return a * np.asarray(x_t, dtype=float) + b * (t / self.T)


@pytest.fixture
def oracle_backend(sched50):
    return OracleBackend(separated_oracle(), sched50)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
