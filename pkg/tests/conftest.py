import numpy as np
import pytest

from occlubench.core import Image, rng_from_seed


@pytest.fixture
def rng():
    return rng_from_seed(1234)


def random_image(rng, channels=3, h=8, w=8):
    return Image(rng.uniform(-1.0, 1.0, size=(channels, h, w)))
