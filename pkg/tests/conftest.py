import sys

import numpy as np
import pytest

from fracmap.constants import FracParams
from fracmap.lattice import build_lattice, preset_function


@pytest.fixture(scope="session")
def hedgehog_lattice():
    p = FracParams(2, 0.5, 2)
    return build_lattice(p, 1 / 8, 1.0, 2.0, shape="box", tail_mode="exterior-function",
                         exterior=preset_function("hedgehog", 2, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(0x5EED)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(lines):
        terminalreporter.write_line(lines[k])
