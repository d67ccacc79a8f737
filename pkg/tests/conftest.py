import numpy as np
import pytest

from codedkf.coded_kf import EncoderDesign
from codedkf.models import DiagonalChannel, Scenario, SourceModel

ACCEPTANCE_LINES = []


def scalar_setup(a=2.0, q=1.0, h=1.0, pi=5.0):
    """Scalar source/channel with a power-normalized unit-gain encoder."""
    src = SourceModel(np.array([[a]]), np.array([[q]]))
    ch = DiagonalChannel(np.array([h]))
    design = EncoderDesign(np.array([[1.0]]), None, np.array([pi]))
    return Scenario(src, ch, pi), design


def random_spd(rng, k, floor=0.5):
    X = rng.normal(size=(k, k))
    return X @ X.T / k + floor * np.eye(k)


def random_unstable_diag(rng, k, lo=1.0, hi=4.0, min_gap=0.05):
    while True:
        lam = rng.uniform(lo, hi, size=k) * rng.choice([-1.0, 1.0], size=k)
        mod = np.sort(np.abs(lam))
        if np.all(mod > lo + 1e-3) and (k < 2 or np.min(np.diff(mod)) > min_gap):
            return lam


@pytest.fixture
def scalar():
    return scalar_setup()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
