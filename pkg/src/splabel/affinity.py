"""Pooled patch-affinity map and signed multicut graph from patch features.

The input is an [N, N, E] grid of self-supervised patch embeddings. Each
patch's affinity is the average cosine similarity to its existing
8-neighbors (3 at corners, 5 at borders); no padding is used, so border
values are means over real neighbors only. The signed graph shares the
8-neighbor topology with edge cost ``cosine - tau_cut``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InputError

# cosine of a vector with norm below this is defined as 0
_NORM_FLOOR = 1e-12

_NEIGHBOR_OFFSETS = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1),           (0, 1),
    (1, -1), (1, 0), (1, 1),
)


@dataclass(frozen=True)
class SignedGraph:
    """Undirected graph with real-valued (signed) edge costs.

    Edges are (u, v, cost) with u < v, no duplicates, no self-loops.
    """

    node_count: int
    edges: tuple[tuple[int, int, float], ...]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0 when either norm is below 1e-12.

    A degenerate (near-zero) patch vector is affinity-neutral rather
    than propagating NaN.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector dims differ: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < _NORM_FLOOR or nv < _NORM_FLOOR:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_grid(f: np.ndarray) -> np.ndarray:
    """Normalize each patch vector; near-zero vectors become exact zeros."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 3:
        raise InputError(f"expected [N,N,E] features, got shape {f.shape}")
    if f.shape[0] != f.shape[1]:
        raise InputError(f"patch grid must be square, got {f.shape[:2]}")
    if not np.isfinite(f).all():
        raise InputError("patch features contain non-finite entries")
    norms = np.linalg.norm(f, axis=2, keepdims=True)
    safe = np.where(norms < _NORM_FLOOR, 1.0, norms)
    unit = f / safe
    return np.where(norms < _NORM_FLOOR, 0.0, unit)


def build_affinity_map(f: np.ndarray) -> np.ndarray:
    """Per-patch mean cosine similarity to the existing 8-neighbors.

    Returns an [N, N] float32 map with every entry in [-1, 1]. Requires
    N >= 2 so that every patch has at least one neighbor.
    """
    unit = _unit_grid(f)
    n = unit.shape[0]
    if n < 2:
        raise InputError("affinity map needs a grid of at least 2x2 patches")

    total = np.zeros((n, n), dtype=np.float64)
    count = np.zeros((n, n), dtype=np.float64)
    for dy, dx in _NEIGHBOR_OFFSETS:
        ys = slice(max(0, -dy), n - max(0, dy))
        xs = slice(max(0, -dx), n - max(0, dx))
        ys_n = slice(max(0, dy), n - max(0, -dy))
        xs_n = slice(max(0, dx), n - max(0, -dx))
        dots = np.einsum("ijk,ijk->ij", unit[ys, xs], unit[ys_n, xs_n])
        total[ys, xs] += np.clip(dots, -1.0, 1.0)
        count[ys, xs] += 1.0
    return np.clip(total / count, -1.0, 1.0).astype(np.float32)


def build_multicut_graph(f: np.ndarray, tau_cut: float) -> SignedGraph:
    """Signed 8-neighbor lattice over patches: cost = cosine - tau_cut.

    Node ids are row-major (row * n + col). Similar neighbors get
    positive cost (attract into one cluster), dissimilar pairs negative.
    """
    unit = _unit_grid(f)
    n = unit.shape[0]
    if n < 2:
        raise InputError("multicut graph needs a grid of at least 2x2 patches")

    edges: list[tuple[int, int, float]] = []
    # offsets pointing forward in row-major order so that u < v
    for dy, dx in ((0, 1), (1, -1), (1, 0), (1, 1)):
        ys = slice(0, n - dy)
        xs = slice(max(0, -dx), n - max(0, dx))
        ys_n = slice(dy, n)
        xs_n = slice(max(0, dx), n - max(0, -dx))
        dots = np.clip(
            np.einsum("ijk,ijk->ij", unit[ys, xs], unit[ys_n, xs_n]), -1.0, 1.0
        )
        rows, cols = np.nonzero(np.ones_like(dots, dtype=bool))
        base_col = max(0, -dx)
        for r, c in zip(rows, cols):
            y, x = r, c + base_col
            u = y * n + x
            v = (y + dy) * n + (x + dx)
            edges.append((u, v, float(dots[r, c]) - tau_cut))
    edges.sort(key=lambda e: (e[0], e[1]))
    return SignedGraph(node_count=n * n, edges=tuple(edges))
