"""Shared synthetic-input builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from splabel.ndio import HyperParams, RunManifest, write_array, write_image_ppm, write_manifest
from splabel.superpixel import SuperpixelSeg, ingest_labels


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_voronoi_labels(rng, h: int, w: int, k: int) -> np.ndarray:
    """Nearest-site label map; regions may be 4-disconnected (ingest splits)."""
    sites = np.stack(
        [rng.integers(0, h, size=k), rng.integers(0, w, size=k)], axis=1
    )
    ys, xs = np.mgrid[0:h, 0:w]
    d2 = (ys[..., None] - sites[:, 0]) ** 2 + (xs[..., None] - sites[:, 1]) ** 2
    return np.argmin(d2, axis=2).astype(np.int32)


def random_seg(rng, h: int, w: int, k: int) -> tuple[SuperpixelSeg, np.ndarray]:
    """Random superpixel segmentation plus the image it was computed from."""
    labels = random_voronoi_labels(rng, h, w, k)
    image = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return ingest_labels(labels, image), image


def random_mask(rng, h: int, w: int) -> np.ndarray:
    """Random nonempty, non-full binary mask."""
    while True:
        m = (rng.random((h, w)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        if 0 < m.sum() < m.size:
            return m


def blob_mask(h: int, w: int, cy: int, cx: int, r: int) -> np.ndarray:
    """Filled disc mask, handy for deterministic fixtures."""
    ys, xs = np.mgrid[0:h, 0:w]
    return (((ys - cy) ** 2 + (xs - cx) ** 2) <= r * r).astype(np.uint8)


def make_synthetic_manifest(root: Path, image_id: str, seed: int) -> Path:
    """Full deterministic manifest: two objects on a plain background.

    Writes features (patch vectors clustered per region so the multicut
    finds the objects), a PPM image, a probability map, and three
    checkpoint mask stacks. Returns the manifest path.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    h = w = 32
    n = 8  # patches per side (patch size 4)

    disc_a = blob_mask(h, w, 14, 10, 6)
    disc_b = blob_mask(h, w, 22, 24, 5)
    objects = (disc_a | disc_b).astype(np.uint8)

    image = np.empty((h, w, 3), dtype=np.uint8)
    image[:] = (40, 90, 60)
    image[disc_a == 1] = (220, 60, 50)
    image[disc_b == 1] = (70, 80, 230)
    image_path = root / f"{image_id}.ppm"
    write_image_ppm(image, image_path)

    # region id per patch from the patch's center pixel
    centers = objects * 1 + disc_b * 1  # 0 bg, 1 disc_a, 2 disc_b
    basis = np.eye(3, 8)
    features = np.empty((n, n, 8), dtype=np.float32)
    for py in range(n):
        for px in range(n):
            region = centers[py * 4 + 2, px * 4 + 2]
            vec = basis[region] + 0.03 * rng.standard_normal(8)
            features[py, px] = vec / np.linalg.norm(vec)
    features_path = root / f"{image_id}_features.npy"
    write_array(features, features_path)

    pm = np.where(objects == 1, 0.82, 0.14) + 0.06 * rng.random((h, w))
    pm_path = root / f"{image_id}_prob.npy"
    write_array(pm.astype(np.float32), pm_path)

    checkpoints = []
    for j, shrink in enumerate((2, 1, 0)):
        stack = np.stack(
            [
                blob_mask(h, w, 14, 10, 6 - shrink),
                blob_mask(h, w, 22, 24, 5 - shrink),
            ]
        ).astype(np.uint8)
        path = root / f"{image_id}_ckpt{j + 1}.npy"
        write_array(stack, path)
        checkpoints.append(str(path))

    manifest = RunManifest(
        image_id=image_id,
        features=str(features_path),
        image=str(image_path),
        prob_map=str(pm_path),
        masks=checkpoints,
        hyperparams=HyperParams(),
    )
    manifest_path = root / f"{image_id}_manifest.json"
    write_manifest(manifest, manifest_path)
    return manifest_path
