import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from seaglide.mrf import ArrayData
from seaglide.synthetic import constant_archive, synthetic_archive

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def archive():
    return synthetic_archive()


@pytest.fixture(scope="session")
def flat_archive():
    return constant_archive()


def random_data(n, p, ns, seed=0, noise=0.3):
    """Rows with an intercept, p-1 regressors, ns state columns and a
    coefficient that shifts with the first state column."""
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
    S = rng.normal(size=(n, ns))
    beta = np.where(S[:, :1] > 0, 1.0, -1.0) * np.arange(1, p + 1)
    y = (X * beta).sum(axis=1) + noise * rng.normal(size=n)
    return ArrayData(X, S, y)



ACCEPTANCE = {}


def record(number, ok, detail):
    """Store an acceptance outcome; printed again in the terminal summary."""
    line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.setdefault(number, []).append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            for line in ACCEPTANCE[n]:
                terminalreporter.write_line(line)
