import numpy as np
import pytest


def random_spd(rng, n, cond=50.0):
    """Random SPD matrix with eigenvalues spread over ``[1, cond]`` (times 1e-3)."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.exp(rng.uniform(0.0, np.log(cond), size=n))
    return 1e-3 * (q * eig) @ q.T


def random_invertible(rng, n):
    while True:
        m = rng.standard_normal((n, n))
        if abs(np.linalg.det(m)) > 1e-2:
            return m


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import VERDICTS

    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
