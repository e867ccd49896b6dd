import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ppreid.data import LabeledDataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_clusters():
    """Two well separated 2-D identities, 20 records each, two cameras."""
    g = np.random.default_rng(7)
    vecs = np.vstack([g.normal([-3.0, 0.0], 0.3, size=(20, 2)), g.normal([3.0, 0.0], 0.3, size=(20, 2))])
    ids = np.repeat([0, 1], 20)
    cams = np.tile([0, 1], 20)
    return LabeledDataset(vecs, ids, cams)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 9):
        line = module.RESULTS.get(number, f"criterion {number}: FAIL  (not run or errored before the check)")
        terminalreporter.write_line(line)
