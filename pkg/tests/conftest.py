import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bbox import WriterConfig, write_dataset
from bbox.sources import SyntheticImageSource


@pytest.fixture
def tiny_dataset(tmp_path):
    """20 samples of 8x8x1 on one 64 KiB page."""
    src = SyntheticImageSource(20, 8, 8, 1, seed=7)
    path = tmp_path / "tiny.bbox"
    write_dataset(src, path, WriterConfig(page_size=65536, seed=7))
    return path, src


@pytest.fixture
def paged_dataset(tmp_path):
    """200 samples of 32x32x3 spread over ~10 64 KiB pages."""
    src = SyntheticImageSource(200, 32, 32, 3, seed=1)
    path = tmp_path / "paged.bbox"
    write_dataset(src, path, WriterConfig(page_size=65536, seed=1))
    return path, src


def random_image(rng: np.random.Generator, max_side=8, channels=None):
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    c = channels if channels is not None else int(rng.integers(1, 4))
    return rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)
