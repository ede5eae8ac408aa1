"""Synthetic image fixtures for the export harness."""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image


def disc(h, w, cy, cx, r):
    ys, xs = np.mgrid[0:h, 0:w]
    return ((ys - cy) ** 2 + (xs - cx) ** 2) <= r * r


def make_test_image(path: Path, seed: int, size: int = 96) -> Path:
    """Dark background with two bright objects; saved as PNG."""
    rng = np.random.default_rng(seed)
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:] = (25, 40, 30)
    a = disc(size, size, size // 3, size // 3, size // 6)
    b = disc(size, size, 2 * size // 3, 2 * size // 3, size // 8)
    img[a] = (235, 200, 60)
    img[b] = (90, 200, 235)
    noise = rng.integers(-8, 9, size=img.shape)
    img = np.clip(img.astype(int) + noise, 0, 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img).save(path)
    return path


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "images"
    for i in range(2):
        make_test_image(d / f"scene{i}.png", seed=50 + i)
    return d
