"""Mask stability scoring and the boundary-weighted self-training loss.

A mask predicted by the final checkpoint is scored by how consistently
earlier checkpoints predicted it (sum over intermediate checkpoints of
the best IoU against any of that checkpoint's masks). Scores are min-max
normalized into [epsilon, 1] over the batch, then down-weight the pixels
within distance d_hat of the mask contour, where labels are least
trustworthy.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError, ShapeMismatch
from .sgmloss import clamp_probs

_INF = float("inf")


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 0 for an empty union."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ShapeMismatch(f"mask extents differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(a & b) / union)


def stability_score(last: np.ndarray, intermediates: list[list[np.ndarray]]) -> float:
    """Sum over intermediate checkpoints of the best IoU with ``last``.

    Each element of ``intermediates`` is one checkpoint's list of masks
    for the same image; an empty checkpoint contributes 0. The result
    lies in [0, e-1] for e-1 intermediate checkpoints.
    """
    total = 0.0
    for masks in intermediates:
        best = 0.0
        for candidate in masks:
            best = max(best, iou(last, candidate))
        total += best
    return total


def minmax_normalize(scores: list[float], epsilon: float) -> list[float]:
    """Min-max rescale into [epsilon, 1]; constant lists map to all 1.

    Equal stability everywhere gives no reason to down-weight any mask,
    so the degenerate zero-range case resolves to full weight.
    """
    if not 0 < epsilon < 1:
        raise InputError(f"epsilon must be in (0, 1), got {epsilon}")
    if not scores:
        raise InputError("scores list is empty")
    lo = min(scores)
    hi = max(scores)
    if hi == lo:
        return [1.0 for _ in scores]
    return [(z - lo) / (hi - lo) * (1.0 - epsilon) + epsilon for z in scores]


def _edt_1d(f: np.ndarray) -> np.ndarray:
    """Exact 1-d squared distance transform of a finite sampled function.

    Lower-envelope-of-parabolas sweep over d(q) = min_p (q-p)^2 + f(p).
    """
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0] = -_INF
    z[1] = _INF
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Two-sided 4-neighbor contour of a binary mask.

    Boundary pixels are mask pixels with a background 4-neighbor plus
    background pixels with a mask 4-neighbor, so the distance band is
    symmetric around the contour.
    """
    m = np.asarray(mask) != 0
    if m.ndim != 2:
        raise InputError(f"expected a 2-d mask, got shape {m.shape}")
    differs = np.zeros_like(m)
    differs[1:, :] |= m[1:, :] != m[:-1, :]
    differs[:-1, :] |= m[:-1, :] != m[1:, :]
    differs[:, 1:] |= m[:, 1:] != m[:, :-1]
    differs[:, :-1] |= m[:, :-1] != m[:, 1:]
    return differs


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance to the nearest boundary pixel.

    Returns all +inf when the mask has no boundary (entirely foreground
    or entirely background). Squared distances are integers, so the
    two-pass transform is exact, not a chamfer approximation.
    """
    boundary = boundary_pixels(mask)
    h, w = boundary.shape
    if not boundary.any():
        return np.full((h, w), _INF)
    # pass 1: per-column distance (in rows) to the nearest boundary pixel.
    # Columns without one get h+w, which exceeds any true pixel distance,
    # so their parabolas never win in pass 2.
    g = np.full((h, w), float(h + w))
    g[boundary] = 0.0
    for y in range(1, h):
        np.minimum(g[y], g[y - 1] + 1.0, out=g[y])
    for y in range(h - 2, -1, -1):
        np.minimum(g[y], g[y + 1] + 1.0, out=g[y])
    # pass 2: lower envelope along rows over f = g^2
    d2 = np.empty((h, w))
    for y in range(h):
        d2[y] = _edt_1d(g[y] ** 2)
    return np.sqrt(d2)


def weight_map(mask: np.ndarray, z_bar: float, d_hat: float) -> np.ndarray:
    """Per-pixel weights: z_bar inside the boundary band, 1 elsewhere."""
    if not 0 < z_bar <= 1:
        raise InputError(f"z_bar must be in (0, 1], got {z_bar}")
    if d_hat <= 0:
        raise InputError(f"d_hat must be positive, got {d_hat}")
    dist = distance_transform(mask)
    return np.where(dist <= d_hat, float(z_bar), 1.0)


def adaptive_loss(
    pm: np.ndarray, target: np.ndarray, wm: np.ndarray
) -> tuple[float, np.ndarray]:
    """Weighted per-pixel binary cross-entropy and its gradient.

    Averages over all pixels; with weights identically 1 this is the
    plain pixel BCE.
    """
    pm = clamp_probs(pm)
    target = np.asarray(target)
    wm = np.asarray(wm, dtype=np.float64)
    if target.shape != pm.shape or wm.shape != pm.shape:
        raise ShapeMismatch(
            f"extents differ: pm {pm.shape}, target {target.shape}, weights {wm.shape}"
        )
    y = (target != 0).astype(np.float64)
    n_p = pm.size
    value = -float(np.sum(wm * (y * np.log(pm) + (1.0 - y) * np.log(1.0 - pm)))) / n_p
    grad = -(wm / n_p) * (y / pm - (1.0 - y) / (1.0 - pm))
    return value, grad
