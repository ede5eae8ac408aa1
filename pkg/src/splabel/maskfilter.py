"""Rate coarse masks by inner-versus-edge affinity and keep the top share.

A mask's edge set is its inside boundary band: mask patches with at
least one non-mask 8-neighbor, plus mask patches on the grid border
(the image border behaves as unknown background). The rating is
mean affinity over the interior minus mean affinity over the edge
band; masks without an interior rate -inf and are kept only when the
quota forces it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeMismatch


@dataclass
class ScoredMask:
    """A patch mask with its rating and keep decision."""

    mask: np.ndarray
    rating: float
    kept: bool = False

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


def split_inner_edge(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (inner, edge) partitions of a nonempty patch mask."""
    m = np.asarray(m) != 0
    if m.ndim != 2:
        raise InputError(f"expected a 2-d patch mask, got shape {m.shape}")
    if not m.any():
        raise InputError("mask has no foreground patch")

    padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    has_bg_neighbor = np.zeros_like(m)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            shifted = padded[1 + dy : padded.shape[0] - 1 + dy,
                             1 + dx : padded.shape[1] - 1 + dx]
            has_bg_neighbor |= ~shifted
    edge = m & has_bg_neighbor  # border patches covered: padding reads as background
    inner = m & ~edge
    return inner, edge


def rate_mask(m: np.ndarray, a: np.ndarray) -> float:
    """Mean affinity over inner patches minus mean over edge patches.

    Returns -inf when the mask has no interior, so degenerate thin
    masks can never outrank a mask with one.
    """
    a = np.asarray(a)
    m = np.asarray(m)
    if m.shape != a.shape:
        raise ShapeMismatch(f"mask {m.shape} vs affinity map {a.shape}")
    inner, edge = split_inner_edge(m)
    if not inner.any():
        return float("-inf")
    return float(a[inner].mean(dtype=np.float64) - a[edge].mean(dtype=np.float64))


def select_top_q(scored: list[ScoredMask], q_percent: float) -> list[ScoredMask]:
    """Mark kept=True on the ceil(q/100 * count) highest-rated masks.

    Ties break toward larger mask area, then lower list index. The
    input list is returned with flags set, original order preserved.
    """
    if not 0 < q_percent <= 100:
        raise InputError(f"q_percent must be in (0, 100], got {q_percent}")
    if not scored:
        return scored
    n_keep = math.ceil(q_percent / 100.0 * len(scored))
    order = sorted(
        range(len(scored)),
        key=lambda i: (-scored[i].rating, -scored[i].area, i),
    )
    keep = set(order[:n_keep])
    for i, sm in enumerate(scored):
        sm.kept = i in keep
    return scored
