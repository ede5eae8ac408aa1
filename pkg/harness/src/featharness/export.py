"""Export orchestration: arrays, PPM copies, and pipeline manifests.

One manifest JSON per image accumulates across export runs: features
first, then probability maps per checkpoint tag. Arrays are written
with numpy's plain ``save`` (NPY v1.0, little-endian float32/uint8),
which is exactly the interchange layout the pipeline reads. The
pipeline itself is never imported; files are the only contract.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stub
from .errors import ModelLoadFailure
from .images import center_crop_to_grid, load_image_rgb, write_ppm

_P_MIN = 1e-6

_DEFAULT_HYPERPARAMS = {
    "q_percent": 60.0,
    "alpha1": 100.0,
    "alpha2": 200.0,
    "e_checkpoints": 3,
    "epsilon": 0.6,
    "d_hat": 3.0,
    "tau_cut": 0.5,
}


@dataclass
class ExportSpec:
    """What to export and from which model."""

    model_id: str = "dino_vitb8"
    patch_size: int = 8
    layer: int = -1
    variant: str = "keys"
    image_paths: list[str] = field(default_factory=list)
    side: int | None = 224
    stub_mode: bool = False
    feature_dim: int = 64  # stub embeddings only; DINO fixes its own width


def _image_id(path: str | Path) -> str:
    return Path(path).stem


def _manifest_path(out_dir: Path, image_id: str) -> Path:
    return out_dir / f"{image_id}_manifest.json"


def _load_or_init_manifest(out_dir: Path, image_id: str) -> dict:
    path = _manifest_path(out_dir, image_id)
    if path.is_file():
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    return {
        "image_id": image_id,
        "masks": [],
        "hyperparams": dict(_DEFAULT_HYPERPARAMS),
    }


def _save_manifest(out_dir: Path, manifest: dict) -> Path:
    path = _manifest_path(out_dir, manifest["image_id"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")
    return path


def _prepare_image(path: str, patch_size: int, side: int | None) -> np.ndarray:
    return center_crop_to_grid(load_image_rgb(path), patch_size, side)


def export_features(spec: ExportSpec, out_dir: str | Path) -> list[Path]:
    """One [N, N, E] float32 array per image, plus PPM copy and manifest.

    Returns the manifest paths, one per image, in input order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = None
    if not spec.stub_mode:
        from . import dino

        model = dino.load_model(spec.model_id)

    manifests = []
    for path in spec.image_paths:
        image_id = _image_id(path)
        image = _prepare_image(path, spec.patch_size, spec.side)
        if spec.stub_mode:
            feats = stub.stub_patch_features(image, spec.patch_size, spec.feature_dim)
        else:
            from . import dino

            feats = dino.extract_patch_features(
                model, image, spec.patch_size, spec.layer, spec.variant
            )
        n = image.shape[0] // spec.patch_size
        if feats.shape[:2] != (n, n):
            raise ModelLoadFailure(
                f"feature grid {feats.shape[:2]} does not match {n}x{n} patches"
            )
        feat_path = out / f"{image_id}_features.npy"
        np.save(feat_path, np.ascontiguousarray(feats, dtype=np.float32))
        ppm_path = out / f"{image_id}.ppm"
        write_ppm(image, ppm_path)

        manifest = _load_or_init_manifest(out, image_id)
        manifest["features"] = feat_path.name
        manifest["image"] = ppm_path.name
        manifests.append(_save_manifest(out, manifest))
    return manifests


def _clamp_unit(pm: np.ndarray, source: str) -> np.ndarray:
    if pm.min() <= 0.0 or pm.max() >= 1.0:
        warnings.warn(
            f"{source}: probabilities outside (0,1); clamping to "
            f"[{_P_MIN}, {1 - _P_MIN}]",
            stacklevel=2,
        )
        pm = np.clip(pm, _P_MIN, 1.0 - _P_MIN)
    return pm


def export_probmaps(
    image_paths: list[str],
    out_dir: str | Path,
    tag: str,
    e_total: int = 3,
    ckpt_path: str | None = None,
    stub_mode: bool = False,
    stub_constant: float | None = None,
    patch_size: int = 8,
    side: int | None = 224,
) -> list[Path]:
    """Per-slot probability maps plus thresholded masks for one checkpoint.

    ``tag`` must be ``checkpoint_K`` with 1 <= K <= e_total. Each image
    gets ``<id>_probmap_<tag>.npy`` (slot maximum, the map the pipeline
    consumes), per-slot maps, and ``<id>_masks_<tag>.npy``. The manifest
    records the mask stacks in tag order and points ``prob_map`` at the
    last checkpoint's composite.
    """
    if not tag.startswith("checkpoint_"):
        raise ValueError(f"tag must look like checkpoint_K, got {tag!r}")
    k = int(tag.removeprefix("checkpoint_"))
    if not 1 <= k <= e_total:
        raise ValueError(f"tag index {k} outside 1..{e_total}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = None
    if not stub_mode:
        if ckpt_path is None:
            raise ModelLoadFailure("a checkpoint path is required outside stub mode")
        try:
            import torch

            model = torch.jit.load(ckpt_path) if str(ckpt_path).endswith(
                ".pt"
            ) else torch.load(ckpt_path, weights_only=False)
        except Exception as exc:
            raise ModelLoadFailure(f"cannot load checkpoint {ckpt_path}: {exc}") from exc

    manifests = []
    for path in image_paths:
        image_id = _image_id(path)
        image = _prepare_image(path, patch_size, side)
        if stub_mode:
            if stub_constant is not None:
                slot_maps = [stub.stub_constant_map(image.shape[:2], stub_constant)]
            else:
                slot_maps = stub.stub_slot_maps(image)
        else:
            from . import dino

            slot_maps = dino.extract_prob_map(model, image)

        slot_maps = [_clamp_unit(m, f"{image_id}/{tag}") for m in slot_maps]
        composite = np.maximum.reduce(slot_maps)
        composite_path = out / f"{image_id}_probmap_{tag}.npy"
        np.save(composite_path, composite.astype(np.float32))
        for j, m in enumerate(slot_maps):
            np.save(out / f"{image_id}_probmap_{tag}_slot{j}.npy", m.astype(np.float32))

        threshold = stub.checkpoint_threshold(k, e_total)
        masks = stub.slot_masks(slot_maps, threshold)
        masks_path = out / f"{image_id}_masks_{tag}.npy"
        np.save(masks_path, masks)

        manifest = _load_or_init_manifest(out, image_id)
        if "image" not in manifest:
            ppm_path = out / f"{image_id}.ppm"
            write_ppm(image, ppm_path)
            manifest["image"] = ppm_path.name
        stacks = manifest.get("masks", [])
        stacks += [""] * (e_total - len(stacks))
        stacks[k - 1] = masks_path.name
        manifest["masks"] = stacks
        manifest["hyperparams"]["e_checkpoints"] = e_total
        if k == e_total:
            manifest["prob_map"] = composite_path.name
        manifests.append(_save_manifest(out, manifest))
    return manifests
