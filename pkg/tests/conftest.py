import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stochlbfgs.memory import LbfgsMemory

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def spd_memory(rng, d, m, capacity=None, cond=10.0):
    """Memory filled with pairs y = A s for a random SPD matrix A."""
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    A = Q @ np.diag(np.geomspace(1.0, cond, d)) @ Q.T
    mem = LbfgsMemory(capacity if capacity is not None else max(m, 1))
    for _ in range(m):
        s = rng.standard_normal(d)
        assert mem.push(s, A @ s)
    return mem


def dense_bfgs_inverse(memory, H0):
    """Explicit recursive inverse update H <- (I - r s y^T) H (I - r y s^T) + r s s^T."""
    H = np.array(H0, dtype=float)
    eye = np.eye(H.shape[0])
    for p in memory:
        r = 1.0 / float(p.y @ p.s)
        V = eye - r * np.outer(p.y, p.s)
        H = V.T @ H @ V + r * np.outer(p.s, p.s)
    return H


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def record_criterion(number, title, ok, detail):
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
