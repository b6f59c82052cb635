import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_problem(rng, K=5, p=4, nk=6, q=1, effect=2.0, noise=1.0):
    """Small clustered regression problem with an explicit truth."""
    from clustermio.model import ClusteredDataset

    labels = np.repeat(np.arange(K), nk)
    X = rng.normal(size=(K * nk, p))
    z = rng.normal(size=K * nk) if q == 2 else None
    beta = rng.normal(size=p)
    gamma = effect * rng.normal(size=(q, K))
    y = X @ beta + gamma[0, labels] + noise * rng.normal(size=K * nk)
    if q == 2:
        y = y + z * gamma[1, labels]
    return ClusteredDataset(X=X, y=y, labels=labels, z=z)


# one line per acceptance criterion, filled in by test_acceptance
VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
