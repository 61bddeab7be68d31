import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from antennagen.geometry import DEFAULT_CONNECTIONS, ParameterRanges


@pytest.fixture(scope="session")
def ranges():
    return ParameterRanges.default()


@pytest.fixture(scope="session")
def conn():
    return DEFAULT_CONNECTIONS


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
