import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lacon.signals import RgbImage, ScorerHandle


@pytest.fixture
def stub_scorers():
    """Fixed-value scorers (aes=5.0, wat=0.1) for composition tests."""
    return (
        ScorerHandle("stub-aes", lambda img, sid=None: 5.0),
        ScorerHandle("stub-wat", lambda img, sid=None: 0.1),
    )


def flat_rgb(value: float, h: int = 8, w: int = 8) -> RgbImage:
    return RgbImage(np.full((h, w, 3), value))


def checkerboard_rgb(h: int = 8, w: int = 8) -> RgbImage:
    yy, xx = np.mgrid[0:h, 0:w]
    g = ((yy + xx) % 2).astype(float)
    return RgbImage(np.repeat(g[:, :, None], 3, axis=2))
