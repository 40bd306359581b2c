import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import PALETTE, make_scene  # noqa: E402


@pytest.fixture(scope="session")
def scene():
    """Textured 256x128 equirect scene plus matching labels."""
    return make_scene(height=128, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture(scope="session")
def palette():
    return dict(PALETTE)
