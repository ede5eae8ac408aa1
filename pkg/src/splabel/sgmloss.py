"""Superpixel-guided mask loss and its analytic gradient.

The loss couples a predicted per-pixel foreground probability map to a
coarse binary mask through superpixels. Per superpixel, pixel
probabilities are pooled into a color-weighted foreground probability;
pure-foreground and pure-background superpixels supply binary targets
for a cross-entropy term, while a minimum-spanning-tree affinity over
superpixel mean colors propagates soft targets for an L1 term. Both
terms differentiate analytically with respect to the probability map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ShapeMismatch
from .ndio import HyperParams
from .superpixel import SuperpixelSeg, rgb_image_to_lab

# probabilities are clamped into [P_MIN, 1 - P_MIN] before any log
P_MIN = 1e-6

# color similarities stay strictly positive even when exp underflows,
# keeping the per-superpixel weight normalizer nonzero
DELTA_FLOOR = 1e-300

UNLABELED = -1


@dataclass
class SuperpixelLabeling:
    """Per-superpixel hard labels: 1, 0, or UNLABELED (-1)."""

    y: np.ndarray
    n_labeled: int


@dataclass
class AffinityTree:
    """Minimum spanning forest with max-edge-weight lookups.

    pathmax[k, l] is the largest edge weight on the forest path between
    k and l, 0 on the diagonal, +inf for cross-component pairs.
    """

    mst_edges: list[tuple[int, int, float]]
    pathmax: np.ndarray

    @classmethod
    def from_edges(
        cls, node_count: int, edges: list[tuple[int, int, float]]
    ) -> "AffinityTree":
        """Kruskal over (u, v, w) edges, filling pathmax during the sweep.

        When an edge of weight w joins two components, w is the path
        maximum for every pair straddling the join, because Kruskal adds
        edges in nondecreasing weight order.
        """
        pathmax = np.full((node_count, node_count), np.inf)
        np.fill_diagonal(pathmax, 0.0)
        parent = list(range(node_count))
        members: list[list[int]] = [[u] for u in range(node_count)]

        def find(u: int) -> int:
            while parent[u] != u:
                parent[u] = parent[parent[u]]
                u = parent[u]
            return u

        mst: list[tuple[int, int, float]] = []
        for u, v, w in sorted(edges, key=lambda e: (e[2], e[0], e[1])):
            ru, rv = find(u), find(v)
            if ru == rv:
                continue
            ai = np.array(members[ru])
            bi = np.array(members[rv])
            pathmax[np.ix_(ai, bi)] = w
            pathmax[np.ix_(bi, ai)] = w
            parent[rv] = ru
            members[ru].extend(members[rv])
            members[rv] = []
            mst.append((u, v, w))
        return cls(mst_edges=mst, pathmax=pathmax)


@dataclass
class LossReport:
    """Combined loss values, per-superpixel probabilities, pixel gradient."""

    hard: float
    soft: float
    total: float
    grad: np.ndarray
    p_super: np.ndarray
    p_hat: np.ndarray
    n_labeled: int
    flags: list[str] = field(default_factory=list)


def clamp_probs(pm: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(pm, dtype=np.float64), P_MIN, 1.0 - P_MIN)


def color_similarity(mu_k, c_i, alpha1: float) -> float:
    """exp(-squared Lab distance / alpha1), in (0, 1]."""
    if alpha1 <= 0:
        raise InputError(f"alpha1 must be positive, got {alpha1}")
    d2 = float(np.sum((np.asarray(mu_k, dtype=np.float64) - np.asarray(c_i, dtype=np.float64)) ** 2))
    return float(max(np.exp(-d2 / alpha1), DELTA_FLOOR))


def pixel_deltas(seg: SuperpixelSeg, image: np.ndarray, alpha1: float) -> np.ndarray:
    """Per-pixel color similarity to the owning superpixel's mean color."""
    if alpha1 <= 0:
        raise InputError(f"alpha1 must be positive, got {alpha1}")
    if np.asarray(image).shape[:2] != seg.labels.shape:
        raise ShapeMismatch(
            f"image extent {np.asarray(image).shape[:2]} vs labels {seg.labels.shape}"
        )
    lab = rgb_image_to_lab(image)
    mu = seg.mean_color[seg.labels]
    d2 = np.sum((lab - mu) ** 2, axis=2)
    return np.maximum(np.exp(-d2 / alpha1), DELTA_FLOOR)


def superpixel_prob(
    pm: np.ndarray, seg: SuperpixelSeg, delta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Color-weighted mean pixel probability per superpixel.

    Returns (P, upsilon): P[k] is the delta-weighted mean of pm inside
    superpixel k; upsilon[k] is the weight normalizer, always positive
    because deltas are strictly positive.
    """
    pm = np.asarray(pm, dtype=np.float64)
    if pm.shape != seg.labels.shape:
        raise ShapeMismatch(f"prob map {pm.shape} vs labels {seg.labels.shape}")
    if delta.shape != pm.shape:
        raise ShapeMismatch(f"delta {delta.shape} vs prob map {pm.shape}")
    idx = seg.labels.ravel()
    upsilon = np.bincount(idx, weights=delta.ravel(), minlength=seg.k)
    weighted = np.bincount(idx, weights=(pm * delta).ravel(), minlength=seg.k)
    return weighted / upsilon, upsilon


def label_superpixels(mask: np.ndarray, seg: SuperpixelSeg) -> SuperpixelLabeling:
    """All-or-nothing hard labels from a pixel-resolution binary mask.

    y=1 if every pixel of the superpixel is foreground, y=0 if every
    pixel is background, UNLABELED otherwise.
    """
    mask = np.asarray(mask)
    if mask.shape != seg.labels.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs labels {seg.labels.shape}")
    fg = (mask != 0).ravel()
    counts = np.bincount(seg.labels.ravel(), weights=fg, minlength=seg.k)
    y = np.full(seg.k, UNLABELED, dtype=np.int64)
    y[counts == seg.sizes] = 1
    y[counts == 0] = 0
    return SuperpixelLabeling(y=y, n_labeled=int(np.sum(y != UNLABELED)))


def hard_loss(
    p: np.ndarray, lab: SuperpixelLabeling
) -> tuple[float, np.ndarray, bool]:
    """Binary cross-entropy over labeled superpixels and its gradient.

    Returns (value, dP, degenerate); when no superpixel is labeled the
    loss and gradient are zero and ``degenerate`` is set instead of
    raising.
    """
    p = clamp_probs(p)
    labeled = lab.y != UNLABELED
    n_s = int(labeled.sum())
    dP = np.zeros_like(p)
    if n_s == 0:
        return 0.0, dP, True
    y = lab.y[labeled].astype(np.float64)
    pk = p[labeled]
    value = -float(np.sum(y * np.log(pk) + (1.0 - y) * np.log(1.0 - pk))) / n_s
    dP[labeled] = -(y / pk - (1.0 - y) / (1.0 - pk)) / n_s
    return value, dP, False


def build_affinity_tree(seg: SuperpixelSeg) -> AffinityTree:
    """Minimum spanning forest of the superpixel adjacency graph."""
    if seg.k < 1:
        raise InputError("segmentation has no superpixels")
    return AffinityTree.from_edges(seg.k, seg.adjacency)


def global_affinity(tree: AffinityTree, alpha2: float) -> np.ndarray:
    """exp(-pathmax / alpha2): symmetric, unit diagonal, entries in [0, 1].

    Cross-component pairs have pathmax +inf and therefore affinity 0.
    """
    if alpha2 <= 0:
        raise InputError(f"alpha2 must be positive, got {alpha2}")
    with np.errstate(over="ignore"):
        return np.exp(-tree.pathmax / alpha2)


def soft_labels(p: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Affinity-weighted mean probability per superpixel, self included.

    Computed in deviation form, p_hat_k = p_k + sum_l psi_kl (p_l - p_k)
    / gamma_k, which is algebraically the weighted mean but keeps the
    constant-input fixed point exact in floating point.
    """
    p = np.asarray(p, dtype=np.float64)
    if psi.shape != (p.size, p.size):
        raise ShapeMismatch(f"psi {psi.shape} vs {p.size} superpixels")
    gamma = psi.sum(axis=1)
    # pairwise differences, not psi @ p - gamma * p: the explicit zeros on
    # the diagonal of (p_l - p_k) make the constant fixed point exact
    spread = (psi * (p[None, :] - p[:, None])).sum(axis=1)
    return p + spread / gamma


def soft_loss(p: np.ndarray, p_hat: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute deviation from the soft targets and its gradient.

    The targets are treated as constants: dP_k = sign(p_k-p_hat_k)/K,
    with sign(0) = 0.
    """
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise ShapeMismatch(f"p {p.shape} vs p_hat {p_hat.shape}")
    if p.size == 0:
        raise InputError("need at least one superpixel")
    diff = p - p_hat
    value = float(np.abs(diff).mean())
    dP = np.sign(diff) / p.size
    return value, dP


def upsample_nearest(mask: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor upsample of a patch mask to pixel resolution."""
    mask = np.asarray(mask)
    h, w = hw
    ys = (np.arange(h) * mask.shape[0]) // h
    xs = (np.arange(w) * mask.shape[1]) // w
    return mask[np.ix_(ys, xs)]


def sgm_loss(
    pm: np.ndarray,
    mask: np.ndarray,
    seg: SuperpixelSeg,
    image: np.ndarray,
    hp: HyperParams,
    propagate_soft_target: bool = False,
) -> LossReport:
    """Hard + soft superpixel-guided loss with the pixel-space gradient.

    ``mask`` is a pixel-resolution binary mask. By default the soft
    targets are detached (no gradient flows through the propagation);
    ``propagate_soft_target`` switches on the full dependency for
    ablation. Gradients reach pixels through the color-weighted pooling:
    within superpixel k, pixel i receives dP_k * delta_i / upsilon_k,
    so off-color (noisy) pixels receive proportionally smaller gradient.
    """
    pm = clamp_probs(pm)
    if pm.shape != seg.labels.shape:
        raise ShapeMismatch(f"prob map {pm.shape} vs labels {seg.labels.shape}")
    mask = np.asarray(mask)
    if mask.shape != pm.shape:
        raise ShapeMismatch(f"mask {mask.shape} vs prob map {pm.shape}")

    delta = pixel_deltas(seg, image, hp.alpha1)
    p, upsilon = superpixel_prob(pm, seg, delta)
    labeling = label_superpixels(mask, seg)
    hard, d_hard, degenerate = hard_loss(p, labeling)

    tree = build_affinity_tree(seg)
    psi = global_affinity(tree, hp.alpha2)
    p_hat = soft_labels(p, psi)
    soft, d_soft = soft_loss(p, p_hat)
    if propagate_soft_target:
        # add the path through p_hat: dL/dp_m -= sum_k sign_k psi_km / gamma_k / K
        gamma = psi.sum(axis=1)
        d_soft = d_soft - psi.T @ (d_soft / gamma)

    dP = d_hard + d_soft
    grad = (dP / upsilon)[seg.labels] * delta
    flags = ["no_labeled_superpixels"] if degenerate else []
    return LossReport(
        hard=hard,
        soft=soft,
        total=hard + soft,
        grad=grad.astype(np.float32),
        p_super=p,
        p_hat=p_hat,
        n_labeled=labeling.n_labeled,
        flags=flags,
    )
