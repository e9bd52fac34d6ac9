import numpy as np
import pytest

from objmap.geometry import OrientedBox3, Pose, Scale, rot_z


def upright_box(center, scale, yaw=0.0, frame="world"):
    return OrientedBox3(Pose(rot_z(yaw), center), Scale.from_array(scale), frame)


def random_upright_pair(rng, spread=1.0):
    """Two random upright boxes near each other (they overlap most of the time)."""
    boxes = []
    for _ in range(2):
        c = rng.uniform(-spread, spread, 3)
        s = rng.uniform(0.3, 2.0, 3)
        boxes.append(upright_box(c, s, rng.uniform(-np.pi, np.pi)))
    return boxes


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
