"""Stability scores, distance transform vs brute force, adaptive loss."""

import math

import numpy as np
import pytest

from splabel.errors import InputError, ShapeMismatch
from splabel.selftrain import (
    adaptive_loss,
    boundary_pixels,
    distance_transform,
    iou,
    minmax_normalize,
    stability_score,
    weight_map,
)
from splabel.sgmloss import clamp_probs
from tests.conftest import blob_mask, random_mask


def brute_force_distance(mask):
    """O(H^2 W^2) nearest-boundary-pixel distances, squared-int exact."""
    boundary = boundary_pixels(mask)
    h, w = boundary.shape
    if not boundary.any():
        return np.full((h, w), np.inf)
    by, bx = np.nonzero(boundary)
    out = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            out[y, x] = np.min((by - y) ** 2 + (bx - x) ** 2)
    return np.sqrt(out)


class TestIou:
    def test_identical_nonempty(self, rng):
        m = random_mask(rng, 5, 5)
        assert iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((2, 4), dtype=np.uint8)
        b = np.zeros((2, 4), dtype=np.uint8)
        a[:, :2] = 1
        b[:, 2:] = 1
        assert iou(a, b) == 0.0

    def test_shifted_block(self):
        # 2x2 block vs same block shifted one column in a 2x3 grid
        a = np.zeros((2, 3), dtype=np.uint8)
        b = np.zeros((2, 3), dtype=np.uint8)
        a[:, 0:2] = 1
        b[:, 1:3] = 1
        assert iou(a, b) == pytest.approx(2 / 6, abs=1e-12)

    def test_empty_union(self):
        z = np.zeros((3, 3), dtype=np.uint8)
        assert iou(z, z) == 0.0

    def test_symmetry(self, rng):
        for _ in range(20):
            a, b = random_mask(rng, 6, 6), random_mask(rng, 6, 6)
            assert iou(a, b) == iou(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            iou(np.ones((2, 2), dtype=np.uint8), np.ones((3, 3), dtype=np.uint8))


class TestStabilityScore:
    def test_identical_across_two_checkpoints(self, rng):
        m = random_mask(rng, 6, 6)
        z = stability_score(m, [[m.copy()], [m.copy()]])
        assert z == 2.0

    def test_no_overlap_anywhere(self):
        m = np.zeros((4, 4), dtype=np.uint8)
        m[0, 0] = 1
        other = np.zeros((4, 4), dtype=np.uint8)
        other[3, 3] = 1
        assert stability_score(m, [[other], [other.copy()]]) == 0.0

    def test_best_per_checkpoint_summed(self):
        last = np.zeros((2, 4), dtype=np.uint8)
        last[:, :2] = 1  # area 4
        half = np.zeros((2, 4), dtype=np.uint8)
        half[:, 1:3] = 1  # IoU 2/6 with last... need 0.5 and 0.25 candidates
        # checkpoint 1: candidates with IoU 0.5 and 0.2 -> max 0.5
        c1a = np.zeros((2, 4), dtype=np.uint8)
        c1a[0, :2] = 1  # inter 2, union 4 -> 0.5
        c1b = np.zeros((2, 4), dtype=np.uint8)
        c1b[0, 3] = 1  # disjoint -> 0
        # checkpoint 2: candidate with IoU 0.25
        c2 = np.zeros((2, 4), dtype=np.uint8)
        c2[0, 0] = 1  # inter 1, union 4 -> 0.25
        z = stability_score(last, [[c1a, c1b], [c2]])
        assert z == pytest.approx(0.75, abs=1e-12)

    def test_empty_checkpoint_contributes_zero(self, rng):
        m = random_mask(rng, 5, 5)
        assert stability_score(m, [[], [m.copy()]]) == 1.0

    def test_range(self, rng):
        for _ in range(20):
            last = random_mask(rng, 6, 6)
            inters = [
                [random_mask(rng, 6, 6) for _ in range(int(rng.integers(0, 4)))]
                for _ in range(2)
            ]
            z = stability_score(last, inters)
            assert 0.0 <= z <= 2.0


class TestMinmaxNormalize:
    def test_published_example(self):
        assert minmax_normalize([0.0, 1.0, 2.0], 0.6) == pytest.approx(
            [0.6, 0.8, 1.0], abs=1e-12
        )

    def test_singleton_maps_to_one(self):
        assert minmax_normalize([1.23], 0.6) == [1.0]

    def test_constant_list_maps_to_one(self):
        assert minmax_normalize([0.7, 0.7, 0.7], 0.6) == [1.0, 1.0, 1.0]

    def test_endpoints_exact(self, rng):
        for _ in range(20):
            scores = rng.uniform(0, 2, size=int(rng.integers(2, 10))).tolist()
            if max(scores) == min(scores):
                continue
            eps = float(rng.uniform(0.05, 0.95))
            out = minmax_normalize(scores, eps)
            assert all(eps <= v <= 1.0 + 1e-15 for v in out)
            assert out[int(np.argmin(scores))] == pytest.approx(eps, abs=1e-15)
            assert out[int(np.argmax(scores))] == pytest.approx(1.0, abs=1e-15)

    def test_epsilon_validated(self):
        with pytest.raises(InputError):
            minmax_normalize([0.0, 1.0], 0.0)
        with pytest.raises(InputError):
            minmax_normalize([0.0, 1.0], 1.0)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            minmax_normalize([], 0.6)


class TestDistanceTransform:
    def test_boundary_pixel_zero(self):
        m = blob_mask(9, 9, 4, 4, 2)
        d = distance_transform(m)
        assert (d[boundary_pixels(m)] == 0).all()

    def test_two_straight_steps(self):
        # column mask: boundary at the interface, interior two steps away
        m = np.zeros((7, 7), dtype=np.uint8)
        m[:, :5] = 1
        d = distance_transform(m)
        # boundary columns are 4 (mask side) and 5 (background side)
        assert d[3, 4] == 0.0 and d[3, 5] == 0.0
        assert d[3, 2] == 2.0
        assert d[3, 6] == 1.0

    def test_diagonal_sqrt2(self):
        m = np.zeros((5, 5), dtype=np.uint8)
        m[2, 2] = 1
        d = distance_transform(m)
        # single-pixel mask: the pixel and its 4-neighbors are boundary
        assert d[2, 2] == 0.0
        assert d[0, 1] == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_all_foreground_inf(self):
        d = distance_transform(np.ones((4, 4), dtype=np.uint8))
        assert np.isinf(d).all()

    def test_matches_bruteforce_random(self, rng):
        for _ in range(25):
            h, w = int(rng.integers(4, 33)), int(rng.integers(4, 33))
            m = random_mask(rng, h, w)
            fast = distance_transform(m)
            brute = brute_force_distance(m)
            assert np.array_equal(fast, brute)  # exact, both sqrt of same ints


class TestWeightMap:
    def test_outside_band_is_one(self):
        m = np.zeros((11, 11), dtype=np.uint8)
        m[5, 5] = 1
        wm = weight_map(m, z_bar=0.8, d_hat=3.0)
        d = distance_transform(m)
        assert (wm[d > 3.0] == 1.0).all()

    def test_inside_band_is_z_bar(self):
        m = np.zeros((11, 11), dtype=np.uint8)
        m[4:7, 4:7] = 1
        wm = weight_map(m, z_bar=0.8, d_hat=3.0)
        d = distance_transform(m)
        assert (wm[d <= 3.0] == 0.8).all()

    def test_z_bar_one_collapses(self):
        m = blob_mask(9, 9, 4, 4, 2)
        assert (weight_map(m, 1.0, 3.0) == 1.0).all()

    def test_band_threshold_matches_oracle(self, rng):
        for _ in range(10):
            m = random_mask(rng, 16, 16)
            wm = weight_map(m, 0.7, 3.0)
            brute = brute_force_distance(m)
            assert ((wm == 0.7) == (brute <= 3.0)).all()

    def test_validation(self):
        m = blob_mask(5, 5, 2, 2, 1)
        with pytest.raises(InputError):
            weight_map(m, 0.0, 3.0)
        with pytest.raises(InputError):
            weight_map(m, 0.5, 0.0)


class TestAdaptiveLoss:
    def test_uniform_weights_equal_plain_bce(self, rng):
        pm = rng.uniform(0.05, 0.95, size=(6, 6))
        target = random_mask(rng, 6, 6)
        ones = np.ones((6, 6))
        value, _ = adaptive_loss(pm, target, ones)
        p = clamp_probs(pm)
        y = target.astype(np.float64)
        plain = -float(np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
        assert value == plain  # exact reduction

    def test_single_pixel_weighted(self):
        value, grad = adaptive_loss(
            np.array([[0.5]]), np.array([[1]], dtype=np.uint8), np.array([[0.8]])
        )
        assert value == pytest.approx(0.8 * math.log(2), abs=1e-12)
        assert grad[0, 0] == pytest.approx(-0.8 / 0.5, abs=1e-12)

    def test_perfect_prediction_near_zero(self, rng):
        target = random_mask(rng, 5, 5)
        pm = target.astype(np.float64)
        value, grad = adaptive_loss(pm, target, np.ones((5, 5)))
        assert value == pytest.approx(0.0, abs=1e-5)
        assert np.abs(grad).max() < 0.1  # clamp keeps gradients finite

    def test_gradient_vs_finite_differences(self, rng):
        for _ in range(20):
            h, w = int(rng.integers(3, 9)), int(rng.integers(3, 9))
            pm = rng.uniform(0.1, 0.9, size=(h, w))
            target = random_mask(rng, h, w)
            wm = np.where(rng.random((h, w)) < 0.5, 0.7, 1.0)
            _, grad = adaptive_loss(pm, target, wm)
            step = 1e-4
            for idx in [(0, 0), (h // 2, w // 2), (h - 1, w - 1)]:
                up, down = pm.copy(), pm.copy()
                up[idx] += step
                down[idx] -= step
                num = (
                    adaptive_loss(up, target, wm)[0]
                    - adaptive_loss(down, target, wm)[0]
                ) / (2 * step)
                denom = max(abs(grad[idx]), abs(num))
                assert abs(grad[idx] - num) / denom < 1e-4

    def test_lower_weight_weakens_gradient(self, rng):
        pm = rng.uniform(0.2, 0.8, size=(5, 5))
        target = random_mask(rng, 5, 5)
        _, g_full = adaptive_loss(pm, target, np.ones((5, 5)))
        _, g_damped = adaptive_loss(pm, target, np.full((5, 5), 0.6))
        assert (np.abs(g_damped) <= np.abs(g_full) + 1e-15).all()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            adaptive_loss(np.full((2, 2), 0.5), np.ones((3, 3), dtype=np.uint8),
                          np.ones((2, 2)))
