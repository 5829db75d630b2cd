import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

torch.set_num_threads(min(4, torch.get_num_threads()))


def random_homography(rng, strength=1e-3):
    """A well-conditioned projective map on a ~500 px frame."""
    h = np.eye(3)
    h[:2, :2] += rng.normal(0, 0.05, (2, 2))
    h[:2, 2] = rng.uniform(-20, 20, 2)
    h[2, :2] = rng.normal(0, strength, 2) * 0.1
    return h


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
