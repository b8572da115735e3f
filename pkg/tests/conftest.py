import numpy as np
import pytest
from scipy import ndimage

from rawvid.raw_core import BayerFrame


def make_frame(h=32, w=32, seed=0, black=256, white=4095, iso=800.0):
    rng = np.random.default_rng(seed)
    samples = rng.integers(black, white + 1, size=(h, w)).astype(np.uint16)
    return BayerFrame(w, h, samples, black_level=black, white_level=white, iso=iso)


def textured_image(h=256, w=256, seed=0, margin=32):
    """Smooth random texture with extra margin for exact-translation crops."""
    rng = np.random.default_rng(seed)
    tex = ndimage.gaussian_filter(rng.normal(size=(h + 2 * margin, w + 2 * margin)), 2.0)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return tex, margin


@pytest.fixture
def frame():
    return make_frame()
