"""Shared fixtures: the two shipped models at desk scale plus the small oracle grid."""
import numpy as np
import pytest

from solitonnf.config import cubic_default, from_dict, potential_default
from solitonnf.pipeline import Pipeline, tiny_pipeline


CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs taking more than a few seconds")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, text = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture
def criterion():
    """record(n, ok, text) stores the summary line for acceptance criterion n."""
    def record(n, ok, text):
        CRITERIA[n] = (bool(ok), text)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {text}")
    return record


@pytest.fixture(scope="session")
def pot_cfg():
    return from_dict(potential_default())


@pytest.fixture(scope="session")
def cubic_cfg():
    return from_dict(cubic_default())


@pytest.fixture(scope="session")
def pot(pot_cfg):
    """Poschl-Teller model at n=128, L=20, p0=0.06."""
    return Pipeline(pot_cfg)


@pytest.fixture(scope="session")
def cubic(cubic_cfg):
    """Cubic NLS at n=256, L=20, lambda=(-1, 0)."""
    return Pipeline(cubic_cfg)


@pytest.fixture(scope="session")
def tiny(pot_cfg):
    """Potential model on the n=32, L=10 oracle grid."""
    return tiny_pipeline(pot_cfg)


@pytest.fixture(scope="session")
def tiny_H1(tiny):
    from solitonnf.normalform import build_H1
    H, rep = build_H1(tiny.chart)
    return H, rep


@pytest.fixture(scope="session")
def tiny_nf(tiny, tiny_H1):
    from solitonnf.normalform import normalize
    return normalize(tiny_H1[0], tiny.frame)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
