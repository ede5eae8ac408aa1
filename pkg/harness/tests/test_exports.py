"""Stub exports: shapes, determinism, interchange validity."""

import json

import numpy as np
import pytest

from featharness.errors import ImageDecodeFailure
from featharness.export import ExportSpec, export_features, export_probmaps
from featharness.images import center_crop_to_grid, load_image_rgb
from featharness.stub import stub_patch_features, stub_slot_maps


class TestImages:
    def test_png_decodes(self, image_dir):
        img = load_image_rgb(image_dir / "scene0.png")
        assert img.shape == (96, 96, 3) and img.dtype == np.uint8

    def test_corrupt_file_names_path(self, tmp_path):
        bad = tmp_path / "broken.png"
        bad.write_bytes(b"not an image at all")
        with pytest.raises(ImageDecodeFailure) as err:
            load_image_rgb(bad)
        assert str(bad) in str(err.value)

    def test_crop_to_grid_224(self, image_dir):
        img = load_image_rgb(image_dir / "scene0.png")
        crop = center_crop_to_grid(img, patch_size=8, side=224)
        assert crop.shape == (224, 224, 3)
        assert 224 // 8 == 28  # grid invariant


class TestStubFeatures:
    def test_grid_shape(self, image_dir):
        img = center_crop_to_grid(load_image_rgb(image_dir / "scene0.png"), 8, 224)
        feats = stub_patch_features(img, patch_size=8, dim=64)
        assert feats.shape == (28, 28, 64)
        assert feats.dtype == np.float32

    def test_unit_norm_and_structure(self, image_dir):
        img = center_crop_to_grid(load_image_rgb(image_dir / "scene0.png"), 8, 96)
        feats = stub_patch_features(img, 8)
        norms = np.linalg.norm(feats, axis=2)
        assert np.allclose(norms, 1.0, atol=1e-5)
        # same-appearance patches embed closer than cross-region ones
        bg = feats[0, 0] @ feats[11, 0]
        cross = feats[0, 0] @ feats[4, 4]  # background vs bright object
        assert bg > cross

    def test_deterministic(self, image_dir):
        img = center_crop_to_grid(load_image_rgb(image_dir / "scene0.png"), 8, 96)
        a = stub_patch_features(img, 8)
        b = stub_patch_features(img, 8)
        assert np.array_equal(a, b)


class TestStubProbmaps:
    def test_open_interval(self, image_dir):
        img = center_crop_to_grid(load_image_rgb(image_dir / "scene0.png"), 8, 96)
        for m in stub_slot_maps(img):
            assert m.min() > 0.0 and m.max() < 1.0

    def test_two_slots_for_two_objects(self, image_dir):
        img = center_crop_to_grid(load_image_rgb(image_dir / "scene0.png"), 8, 96)
        assert len(stub_slot_maps(img)) == 2


class TestExportFeatures:
    def test_writes_arrays_and_manifest(self, image_dir, tmp_path):
        out = tmp_path / "out"
        spec = ExportSpec(stub_mode=True, side=96,
                          image_paths=[str(image_dir / "scene0.png")])
        manifests = export_features(spec, out)
        assert len(manifests) == 1
        manifest = json.loads(manifests[0].read_text())
        feats = np.load(out / manifest["features"])
        assert feats.shape == (12, 12, 64) and feats.dtype == np.float32
        assert (out / manifest["image"]).is_file()
        assert manifest["hyperparams"]["e_checkpoints"] == 3

    def test_same_image_twice_identical(self, image_dir, tmp_path):
        spec = ExportSpec(stub_mode=True, side=96,
                          image_paths=[str(image_dir / "scene0.png")])
        export_features(spec, tmp_path / "a")
        export_features(spec, tmp_path / "b")
        fa = (tmp_path / "a" / "scene0_features.npy").read_bytes()
        fb = (tmp_path / "b" / "scene0_features.npy").read_bytes()
        assert fa == fb


class TestExportProbmaps:
    def test_constant_stub(self, image_dir, tmp_path):
        out = tmp_path / "out"
        export_probmaps(
            [str(image_dir / "scene0.png")], out, tag="checkpoint_3",
            stub_mode=True, stub_constant=0.5, side=96,
        )
        pm = np.load(out / "scene0_probmap_checkpoint_3.npy")
        assert (pm == 0.5).all()
        assert pm.dtype == np.float32

    def test_three_checkpoints_manifest(self, image_dir, tmp_path):
        out = tmp_path / "out"
        for k in (1, 2, 3):
            export_probmaps(
                [str(image_dir / "scene0.png")], out, tag=f"checkpoint_{k}",
                stub_mode=True, side=96,
            )
        manifest = json.loads((out / "scene0_manifest.json").read_text())
        assert len(manifest["masks"]) == 3
        assert all(name for name in manifest["masks"])
        assert manifest["hyperparams"]["e_checkpoints"] == 3
        assert manifest["prob_map"] == "scene0_probmap_checkpoint_3.npy"
        # masks grow as checkpoints become more confident
        areas = [np.load(out / name).sum() for name in manifest["masks"]]
        assert areas[0] <= areas[1] <= areas[2]

    def test_bad_tag_rejected(self, image_dir, tmp_path):
        with pytest.raises(ValueError):
            export_probmaps([str(image_dir / "scene0.png")], tmp_path, tag="last",
                            stub_mode=True)
        with pytest.raises(ValueError):
            export_probmaps([str(image_dir / "scene0.png")], tmp_path,
                            tag="checkpoint_9", e_total=3, stub_mode=True)

    def test_out_of_range_values_clamped_with_warning(self, image_dir, tmp_path):
        with pytest.warns(UserWarning, match="clamping"):
            export_probmaps(
                [str(image_dir / "scene0.png")], tmp_path / "o", tag="checkpoint_3",
                stub_mode=True, stub_constant=1.0, side=96,
            )
        pm = np.load(tmp_path / "o" / "scene0_probmap_checkpoint_3.npy")
        assert pm.max() < 1.0
