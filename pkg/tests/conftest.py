import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gearnet.graph import build_graph  # noqa: E402
from gearnet.synthetic import synthetic_structures  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_graphs():
    structures = synthetic_structures(np.random.default_rng(7), 4, 16)
    return [build_graph(s) for s in structures]
