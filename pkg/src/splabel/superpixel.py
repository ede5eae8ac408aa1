"""Superpixel segmentation, color statistics, and adjacency.

Superpixels either come from the built-in SNIC-style generator or from
an arbitrary external label map. Either way the result is normalized to
the same structure: contiguous labels 0..K-1, 4-connected regions,
per-superpixel mean colors in CIELAB (D65), sizes, and an adjacency
list weighted by squared mean-color distance.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError, NegativeLabel

# sRGB -> XYZ under BT.709 primaries, white D65 (2 degree observer)
_RGB_TO_XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])
_LAB_EPS = 216.0 / 24389.0
_LAB_KAPPA = 24389.0 / 27.0

_FOUR_CONN = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass
class SuperpixelSeg:
    """Pixel-resolution superpixel segmentation with per-region statistics.

    labels: [H, W] int32 in 0..K-1, each region 4-connected.
    mean_color: [K, 3] Lab means. sizes: [K] pixel counts.
    adjacency: (m, n, w) per 4-adjacent region pair, m < n,
    w = squared Lab distance between the two mean colors.
    """

    labels: np.ndarray
    k: int
    mean_color: np.ndarray
    sizes: np.ndarray
    adjacency: list[tuple[int, int, float]] = field(default_factory=list)

    def stats_dict(self) -> dict:
        return {
            "K": int(self.k),
            "sizes": self.sizes.tolist(),
            "mean_color": [[float(c) for c in row] for row in self.mean_color],
            "edges": [[int(m), int(n), float(w)] for m, n, w in self.adjacency],
        }


def rgb_to_lab(rgb) -> tuple[float, float, float]:
    """Convert one sRGB uint8 triple to CIELAB under D65."""
    arr = np.asarray(rgb, dtype=np.float64).reshape(1, 1, 3)
    if (arr < 0).any() or (arr > 255).any():
        raise InputError(f"RGB channels must lie in [0, 255], got {rgb}")
    lab = rgb_image_to_lab(arr.astype(np.uint8))[0, 0]
    return float(lab[0]), float(lab[1]), float(lab[2])


def rgb_image_to_lab(image: np.ndarray) -> np.ndarray:
    """Vectorized sRGB -> XYZ(D65) -> CIELAB for an [H, W, 3] uint8 image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"expected [H,W,3] image, got shape {image.shape}")
    srgb = image.astype(np.float64) / 255.0
    linear = np.where(
        srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4
    )
    xyz = linear @ _RGB_TO_XYZ.T
    t = xyz / _WHITE_D65
    f = np.where(t > _LAB_EPS, np.cbrt(t), (_LAB_KAPPA * t + 16.0) / 116.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def _seed_grid(h: int, w: int, k_target: int) -> list[tuple[int, int]]:
    """Regular seed grid with at most k_target seeds, row-major order."""
    ny = int(round(np.sqrt(k_target * h / w))) if w else 1
    ny = min(max(ny, 1), h)
    nx = min(max(k_target // ny, 1), w)
    seeds = []
    for i in range(ny):
        y = int((i + 0.5) * h / ny)
        for j in range(nx):
            x = int((j + 0.5) * w / nx)
            seeds.append((y, x))
    return seeds


def snic_superpixels(
    image: np.ndarray, k_target: int, compactness: float = 10.0
) -> SuperpixelSeg:
    """SNIC-style priority-queue region growing from a regular seed grid.

    Pixels join the region with the smallest combined Lab-color and
    scaled spatial distance to the region's running centroid. Growth
    through 4-neighbors makes every region 4-connected by construction;
    ties resolve by queue insertion order, so results are deterministic.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"expected [H,W,3] image, got shape {image.shape}")
    h, w = image.shape[:2]
    if k_target < 1 or k_target > h * w:
        raise InputError(f"k_target must be in [1, {h * w}], got {k_target}")

    lab = rgb_image_to_lab(image)
    seeds = _seed_grid(h, w, k_target)
    k = len(seeds)
    s2 = (h * w) / float(k)  # mean region area, normalizes spatial distance
    m2 = float(compactness) ** 2

    labels = np.full((h, w), -1, dtype=np.int32)
    sum_lab = np.zeros((k, 3))
    sum_pos = np.zeros((k, 2))
    count = np.zeros(k, dtype=np.int64)

    heap: list[tuple[float, int, int, int, int]] = []
    tick = 0
    for region, (y, x) in enumerate(seeds):
        heap.append((0.0, tick, y, x, region))
        tick += 1
    heapq.heapify(heap)

    while heap:
        _, _, y, x, region = heapq.heappop(heap)
        if labels[y, x] != -1:
            continue
        labels[y, x] = region
        sum_lab[region] += lab[y, x]
        sum_pos[region] += (y, x)
        count[region] += 1
        c_lab = sum_lab[region] / count[region]
        c_pos = sum_pos[region] / count[region]
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            yy, xx = y + dy, x + dx
            if 0 <= yy < h and 0 <= xx < w and labels[yy, xx] == -1:
                dc2 = float(np.sum((lab[yy, xx] - c_lab) ** 2))
                ds2 = float((yy - c_pos[0]) ** 2 + (xx - c_pos[1]) ** 2)
                dist = np.sqrt(dc2 + ds2 / s2 * m2)
                heapq.heappush(heap, (dist, tick, yy, xx, region))
                tick += 1

    return ingest_labels(labels, image)


def ingest_labels(labels: np.ndarray, image: np.ndarray) -> SuperpixelSeg:
    """Normalize an arbitrary nonnegative label map into a SuperpixelSeg.

    Labels are made contiguous, 4-disconnected components of a label are
    split into distinct superpixels, and Lab statistics plus adjacency
    weights are computed. Final ids follow first pixel appearance in
    row-major order, so the result is independent of input label values.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise InputError(f"expected [H,W] label map, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"label map must be integer, got {labels.dtype}")
    if (labels < 0).any():
        raise NegativeLabel("label map contains negative labels")
    image = np.asarray(image)
    if image.shape[:2] != labels.shape:
        raise InputError(
            f"image extent {image.shape[:2]} does not match labels {labels.shape}"
        )

    # split disconnected components per input label
    split = np.full(labels.shape, -1, dtype=np.int64)
    next_id = 0
    for value in np.unique(labels):
        comp, n_comp = ndimage.label(labels == value, structure=_FOUR_CONN)
        split[comp > 0] = comp[comp > 0] + next_id - 1
        next_id += n_comp

    # relabel by first row-major appearance
    values, first_pos = np.unique(split.ravel(), return_index=True)
    order = values[np.argsort(first_pos)]
    remap = np.empty(next_id, dtype=np.int32)
    remap[order] = np.arange(next_id, dtype=np.int32)
    final = remap[split]
    k = next_id

    lab = rgb_image_to_lab(image)
    idx = final.ravel()
    sizes = np.bincount(idx, minlength=k).astype(np.int64)
    mean_color = np.stack(
        [np.bincount(idx, weights=lab[..., c].ravel(), minlength=k) for c in range(3)],
        axis=1,
    ) / sizes[:, None]

    adjacency = _adjacency(final, k, mean_color)
    return SuperpixelSeg(
        labels=final, k=k, mean_color=mean_color, sizes=sizes, adjacency=adjacency
    )


def _adjacency(labels: np.ndarray, k: int, mean_color: np.ndarray):
    """4-adjacency edges (m, n, w) with w = squared Lab distance of means."""
    pairs = set()
    a, b = labels[:, :-1], labels[:, 1:]
    diff = a != b
    pairs.update(zip(a[diff].tolist(), b[diff].tolist()))
    a, b = labels[:-1, :], labels[1:, :]
    diff = a != b
    pairs.update(zip(a[diff].tolist(), b[diff].tolist()))

    edges = sorted({(m, n) if m < n else (n, m) for m, n in pairs})
    return [
        (m, n, float(np.sum((mean_color[m] - mean_color[n]) ** 2)))
        for m, n in edges
    ]
