import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from rigmap.geometry import Pose, rodrigues
from rigmap.simulator import WorldConfig, generate_world


def random_pose(rng, angle=np.pi, trans=5.0, timestamp=None) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose(rodrigues(axis * rng.uniform(0, angle)), rng.uniform(-trans, trans, 3), timestamp)


vectors = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)
seeds = st.integers(0, 2**31 - 1)


@pytest.fixture(scope="session")
def default_world():
    return generate_world(WorldConfig())


@pytest.fixture(scope="session")
def line_world():
    return generate_world(WorldConfig(trajectory="line", wobble_deg=0.0, n_frames=200, length=80.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
