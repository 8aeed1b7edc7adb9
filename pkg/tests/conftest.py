import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from randkrylov.linop import InverseProblem, make_dense_operator

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_problem(m, n, seed, x_true=True, noise=0.0, cond=None):
    """Dense random problem; ``cond`` sets a geometric singular value spread."""
    rng = np.random.default_rng(seed)
    if cond is None:
        A = rng.standard_normal((m, n))
    else:
        U, _ = np.linalg.qr(rng.standard_normal((m, min(m, n))))
        V, _ = np.linalg.qr(rng.standard_normal((n, min(m, n))))
        s = np.logspace(0, -np.log10(cond), min(m, n))
        A = (U * s) @ V.T
    x = rng.standard_normal(n)
    b = A @ x
    nn = 0.0
    if noise:
        e = rng.standard_normal(m)
        e *= noise * np.linalg.norm(b) / np.linalg.norm(e)
        b = b + e
        nn = float(np.linalg.norm(e))
    return InverseProblem(make_dense_operator(A), b, x if x_true else None, nn, noise)


@pytest.fixture
def small_problem():
    return random_problem(12, 8, 0)


ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
