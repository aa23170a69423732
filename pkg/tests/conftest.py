import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from saaclt import dp, lqr

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance lines collected for the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line[1])


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line for an acceptance criterion."""
    def _report(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} -- {detail}"
        ACCEPTANCE.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok
    return _report


@pytest.fixture(scope="session")
def bench_model():
    return lqr.benchmark_instance()


@pytest.fixture(scope="session")
def bench_riccati(bench_model):
    return lqr.riccati_backward(bench_model)


@pytest.fixture(scope="session")
def bench_law(bench_riccati):
    return lqr.asymptotic_recursion(bench_riccati)


@pytest.fixture(scope="session")
def bench_problem(bench_model):
    return lqr.lqr_problem(bench_model)


@pytest.fixture(scope="session")
def bench_true(bench_problem):
    return dp.backward_induction(bench_problem, "true")


@pytest.fixture(scope="session")
def bench_gamma(bench_problem, bench_true):
    return dp.propagate_covariance(bench_problem, bench_true)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
