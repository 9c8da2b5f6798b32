import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gpstc.gp import Dataset, Hyperparams, fit

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_model(rng, n_x, n_u=1, n=12, noise=1e-2):
    """A GP fitted to a random smooth map, with random hyperparameters."""
    d = n_x + n_u
    X = rng.uniform(-1.5, 1.5, size=(n, d))
    A = rng.normal(size=(d, n_x)) * 0.5
    Y = np.sin(X @ A) + 0.1 * rng.normal(size=(n, n_x))
    hyps = [
        Hyperparams(rng.uniform(0.5, 1.5), rng.uniform(0.6, 2.0, size=d), noise)
        for _ in range(n_x)
    ]
    return fit(Dataset(X, Y, n_u), hyps)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def record_acceptance(key, passed, detail):
    ACCEPTANCE_LINES[key] = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
