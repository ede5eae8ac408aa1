"""Weight-free stand-ins for the ViT and the segmentation network.

The stub keeps the whole export surface runnable with no downloads:
patch features are a fixed random projection of local color statistics
(so patches of similar appearance get similar embeddings and the
downstream clustering has real structure), and probability maps are
smooth bumps over bright connected regions, one per mask slot, with a
confidence that grows across checkpoints.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

_PROJECTION_SEED = 1315423911  # fixed: stub output depends on pixels only
_P_LO, _P_HI = 0.1, 0.9


def stub_patch_features(image: np.ndarray, patch_size: int, dim: int = 64) -> np.ndarray:
    """[N, N, dim] float32 embeddings from per-patch color statistics.

    Statistics are standardized across the image's patches before the
    projection, so cosine similarity separates appearance clusters the
    way self-supervised features do (raw color vectors are all-positive
    and would look mutually similar).
    """
    h, w = image.shape[:2]
    n = h // patch_size
    patches = (
        image[: n * patch_size, : n * patch_size]
        .reshape(n, patch_size, n, patch_size, 3)
        .astype(np.float64)
    )
    stats = np.concatenate(
        [
            patches.mean(axis=(1, 3)) / 255.0,
            patches.std(axis=(1, 3)) / 255.0,
        ],
        axis=2,
    ).reshape(n * n, 6)
    mu = stats.mean(axis=0)
    sd = stats.std(axis=0)
    sd[sd < 1e-9] = 1.0
    z = (stats - mu) / sd
    rng = np.random.default_rng(_PROJECTION_SEED)
    projection = rng.standard_normal((z.shape[1], dim))
    feats = (z @ projection).reshape(n, n, dim)
    norms = np.linalg.norm(feats, axis=2, keepdims=True)
    feats = feats / np.maximum(norms, 1e-12)
    return feats.astype(np.float32)


def _luminance(image: np.ndarray) -> np.ndarray:
    rgb = image.astype(np.float64) / 255.0
    return 0.2126 * rgb[..., 0] + 0.7152 * rgb[..., 1] + 0.0722 * rgb[..., 2]


def stub_slot_maps(image: np.ndarray, max_slots: int = 2) -> list[np.ndarray]:
    """One smooth foreground-probability bump per bright region.

    Regions are connected components above the mean luminance; the
    probability peaks at each region's interior and decays to a low
    floor outside, always inside (0, 1).
    """
    lum = _luminance(image)
    fg = lum > lum.mean()
    labeled, n_comp = ndimage.label(fg)
    if n_comp == 0:
        return [np.full(lum.shape, 0.5)]
    sizes = ndimage.sum_labels(np.ones_like(lum), labeled, range(1, n_comp + 1))
    order = np.argsort(-sizes, kind="stable")[:max_slots]
    maps = []
    for comp in order:
        region = labeled == comp + 1
        inside = ndimage.distance_transform_edt(region)
        peak = inside.max()
        if peak == 0:
            continue
        maps.append(_P_LO + (_P_HI - _P_LO) * inside / peak)
    return maps or [np.full(lum.shape, 0.5)]


def stub_constant_map(shape: tuple[int, int], value: float = 0.5) -> np.ndarray:
    """The untrained-network stand-in: a flat probability everywhere."""
    return np.full(shape, value)


def checkpoint_threshold(tag_index: int, e_total: int) -> float:
    """Mask threshold per checkpoint: later checkpoints are more confident.

    Thresholds fall from 0.6 toward 0.45, so masks grow monotonically
    across checkpoints and stability scores stay informative.
    """
    if e_total <= 1:
        return 0.5
    return 0.6 - 0.15 * (tag_index - 1) / (e_total - 1)


def slot_masks(slot_maps: list[np.ndarray], threshold: float) -> np.ndarray:
    """[M, H, W] uint8 stack: each slot map thresholded into a mask."""
    masks = [(m > threshold).astype(np.uint8) for m in slot_maps]
    masks = [m for m in masks if m.any()]
    if not masks:
        shape = slot_maps[0].shape if slot_maps else (1, 1)
        return np.zeros((0,) + shape, dtype=np.uint8)
    return np.stack(masks).astype(np.uint8)
