import numpy as np
import pytest

from ivfuse.generator import FusionConfig


@pytest.fixture
def small_config():
    """Desk-scale architecture: every stage present, tiny embeddings."""
    return FusionConfig(cnn_layers=4, channels=8, spatial_patch=4, channel_patch=16,
                        spatial_embed=64, channel_embed=32, encoder_layers=2, heads=4)


def structured_image(size, seed=0):
    """Deterministic smooth-gradient-plus-texture test image in [0, 1]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = 0.35 * xx + 0.25 * yy + 0.2 * np.sin(6.0 * xx) * np.cos(5.0 * yy)
    img += 0.12 * rng.standard_normal((size, size))
    img -= img.min()
    img /= img.max()
    return img


@pytest.fixture
def test_card():
    return structured_image(64, seed=7)
