import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def structured_image(n=64, m=None):
    """Smooth synthetic test image (natural-image-like statistics)."""
    m = n if m is None else m
    y, x = np.mgrid[0:n, 0:m]
    y, x = y / n, x / m
    r = 0.5 + 0.5 * np.sin(6.3 * x) * np.cos(4.2 * y)
    g = np.clip(x * 0.8 + 0.2 * np.sin(12 * y), 0, 1)
    b = np.clip(0.3 + 0.4 * np.cos(8 * x * y) * y, 0, 1)
    return np.stack([r, g, b], axis=-1)


@pytest.fixture
def small_image():
    return structured_image(32)
