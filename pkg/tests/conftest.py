import sys

import numpy as np
import pytest

from roadprior import dataset as ds
from roadprior import template_space as ts


@pytest.fixture(scope="session")
def corpus():
    """100 synthetic frames, ~570 elements."""
    return ds.generate_synthetic(ds.SynthConfig(n_frames=100, seed=0))


@pytest.fixture(scope="session")
def corpus_matrix(corpus):
    return ts.ElementMatrix.from_records(corpus)


@pytest.fixture(scope="session")
def corpus_space(corpus_matrix):
    return ts.fit(corpus_matrix, 20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("[")[1].split("]")[0])):
        terminalreporter.write_line(line)
