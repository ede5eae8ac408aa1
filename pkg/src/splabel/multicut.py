"""Correlation clustering of the signed patch graph, plus the corner rule.

The solver is greedy additive edge contraction: repeatedly merge the
cluster pair with the largest positive aggregate inter-cluster cost,
summing parallel edges on contraction. Ties break on the smallest
(min cluster id, max cluster id) pair so runs are reproducible. The
merged cluster keeps the smaller id.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .affinity import SignedGraph
from .errors import InputError, LabelOutOfRange


@dataclass(frozen=True)
class Partition:
    """Per-node cluster labels, contiguous 0..k-1."""

    labels: tuple[int, ...]
    k: int

    def __post_init__(self):
        seen = set(self.labels)
        if seen != set(range(self.k)):
            raise LabelOutOfRange(
                f"labels must be a surjection onto 0..{self.k - 1}"
            )


def multicut_objective(g: SignedGraph, p: Partition) -> float:
    """Total cost of edges whose endpoints lie in different clusters."""
    if len(p.labels) != g.node_count:
        raise LabelOutOfRange(
            f"partition covers {len(p.labels)} nodes, graph has {g.node_count}"
        )
    return float(sum(c for u, v, c in g.edges if p.labels[u] != p.labels[v]))


def solve_multicut(g: SignedGraph) -> Partition:
    """Greedy additive edge contraction on the signed graph.

    Merges strictly improve the objective, so the result is never worse
    than the all-singletons partition. Cluster ids in the result are
    contiguous, ordered by each cluster's smallest member node.
    """
    if g.node_count == 0:
        raise InputError("cannot solve multicut on an empty graph")

    # aggregate inter-cluster costs, symmetric dict-of-dicts
    weight: dict[int, dict[int, float]] = {u: {} for u in range(g.node_count)}
    for u, v, c in g.edges:
        weight[u][v] = weight[u].get(v, 0.0) + c
        weight[v][u] = weight[v].get(u, 0.0) + c

    alive = [True] * g.node_count
    members: list[list[int]] = [[u] for u in range(g.node_count)]
    heap: list[tuple[float, int, int]] = []
    for u in range(g.node_count):
        for v, c in weight[u].items():
            if u < v:
                heapq.heappush(heap, (-c, u, v))

    while heap:
        negc, a, b = heapq.heappop(heap)
        c = -negc
        if c <= 0:
            break
        if not (alive[a] and alive[b]):
            continue
        current = weight[a].get(b)
        if current is None or current != c:
            continue  # stale entry
        # contract b into a (a < b by construction)
        alive[b] = False
        members[a].extend(members[b])
        members[b] = []
        del weight[a][b]
        del weight[b][a]
        for x, cbx in weight[b].items():
            weight[x].pop(b, None)
            merged = weight[a].get(x, 0.0) + cbx
            weight[a][x] = merged
            weight[x][a] = merged
            if merged > 0:
                lo, hi = (a, x) if a < x else (x, a)
                heapq.heappush(heap, (-merged, lo, hi))
        weight[b].clear()

    labels = [-1] * g.node_count
    k = 0
    for u in range(g.node_count):  # ascending min-member order
        if alive[u]:
            for node in members[u]:
                labels[node] = k
            k += 1
    return Partition(labels=tuple(labels), k=k)


def partition_to_masks(p: Partition, n: int) -> list[np.ndarray]:
    """One [n, n] uint8 mask per cluster; disjoint, jointly exhaustive."""
    if len(p.labels) != n * n:
        raise LabelOutOfRange(f"partition has {len(p.labels)} nodes, grid needs {n * n}")
    grid = np.asarray(p.labels, dtype=np.int64).reshape(n, n)
    return [(grid == cid).astype(np.uint8) for cid in range(p.k)]


def is_foreground(m: np.ndarray) -> bool:
    """Corner rule: foreground iff the mask covers at most 1 of the 4 corners."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise InputError(f"expected a 2-d patch mask, got shape {m.shape}")
    corners = int(m[0, 0] != 0) + int(m[0, -1] != 0) + int(m[-1, 0] != 0) + int(m[-1, -1] != 0)
    return corners <= 1
