import numpy as np
import pytest

from resilient_fusion.se3 import Transform, Twist, exp_se3, exp_so3


def random_rotation(rng, max_angle=np.pi - 0.1):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0.0, max_angle))


def random_transform(rng, max_angle=np.pi - 0.1, trans_scale=5.0):
    return Transform(random_rotation(rng, max_angle), trans_scale * rng.standard_normal(3))


def random_twist(rng, max_angle=np.pi - 0.1, trans_scale=5.0):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return Twist(trans_scale * rng.standard_normal(3), axis * rng.uniform(0.0, max_angle))


def random_spd6(rng, scale=1.0):
    a = rng.standard_normal((6, 6))
    return scale * (a @ a.T) + 0.1 * np.eye(6)


def mini_ring(duration=40.0, seed=11, **overrides):
    """Small corridor ring whose one-lap speed stays walking-pace for short
    test scenarios (the default 40 m ring is meant for 300 s runs)."""
    from resilient_fusion.simulator import Scenario

    base = dict(
        name="mini",
        duration=duration,
        corridor_length=14.0,
        ring_breadth=9.0,
        seed=seed,
    )
    base.update(overrides)
    return Scenario(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
