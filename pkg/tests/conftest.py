import numpy as np
import pytest


def random_xi(rng, max_angle=2.0, trans_scale=2.0):
    rho = rng.normal(size=3) * trans_scale
    phi = rng.normal(size=3)
    phi = phi / np.linalg.norm(phi) * rng.uniform(0.0, max_angle)
    return np.concatenate([rho, phi])


def random_pose(rng, max_angle=2.0, trans_scale=2.0):
    from multimotion import se3

    return se3.exp(random_xi(rng, max_angle, trans_scale))


@pytest.fixture
def rng():
    return np.random.default_rng(20240813)
