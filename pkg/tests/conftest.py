import numpy as np
import pytest

from capabeam.physics import Aperture, Scenario


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` with respect to ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    """Norm-wise relative error of ``a`` against reference ``b``."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def random_users(rng, K, low=(-1, -1, 30), high=(1, 1, 30)):
    low, high = np.asarray(low, float), np.asarray(high, float)
    return low + (high - low) * rng.random((K, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scene4(rng):
    return Scenario(users=random_users(rng, 4), aperture=Aperture.square(0.25))


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
