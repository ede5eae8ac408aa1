"""Stage orchestration over run manifests, plus overlay rendering.

Each stage reads its inputs through the manifest, writes its outputs
under ``<out>/<image_id>/``, and records them in an updated manifest at
``<out>/<image_id>/manifest.json``. Later stages (or later invocations)
resolve their dependencies through that updated manifest, so stages can
be rerun in isolation and full reruns are byte-identical: nothing here
consults clocks, hostnames, or random state.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import affinity as aff
from . import maskfilter, multicut, selftrain, sgmloss, superpixel
from .errors import (
    InputError,
    MissingInput,
    ShapeMismatch,
    StageDependencyViolation,
)
from .ndio import (
    HyperParams,
    RunManifest,
    read_array,
    read_image_ppm,
    read_manifest,
    write_array,
    write_image_ppm,
    write_json,
    write_manifest,
)

STAGES = ("affinity", "multicut", "filter", "superpixel", "sgm", "selftrain")

# manifest keys that must already be recorded before a stage may run;
# multicut follows affinity because both realize one coarse-mask flow
_STAGE_DEPS = {
    "affinity": (),
    "multicut": ("affinity",),
    "filter": ("affinity", "masks_raw", "multicut_report"),
    "superpixel": (),
    "sgm": ("masks_filtered", "filter_report", "superpixels_out"),
    "selftrain": (),
}

_GOLDEN_ANGLE = 137.50776405003785


@dataclass
class PipelineConfig:
    """Run-wide settings: hyperparameters, superpixel budget, stage subset."""

    hyperparams: HyperParams | None = None
    k_target: int = 300
    stages: tuple[str, ...] = STAGES
    seed: int = 0  # reserved; all stages are deterministic

    def __post_init__(self):
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise InputError(f"unknown stages: {unknown}")
        # canonical execution order regardless of how the subset was given
        self.stages = tuple(s for s in STAGES if s in self.stages)
        if self.k_target < 1:
            raise InputError(f"k_target must be >= 1, got {self.k_target}")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        hp = d.pop("hyperparams", None)
        kwargs = {}
        if hp is not None:
            kwargs["hyperparams"] = HyperParams.from_dict(hp)
        if "k_target" in d:
            kwargs["k_target"] = int(d.pop("k_target"))
        if "stages" in d:
            kwargs["stages"] = tuple(d.pop("stages"))
        if "seed" in d:
            kwargs["seed"] = int(d.pop("seed"))
        if d:
            raise InputError(f"unknown config keys: {sorted(d)}")
        return cls(**kwargs)


def _work_dir(out_dir: str | Path, manifest: RunManifest) -> Path:
    d = Path(out_dir) / manifest.image_id
    d.mkdir(parents=True, exist_ok=True)
    return d


def _absolutize_inputs(manifest: RunManifest) -> RunManifest:
    """Pin source-input paths so base_dir can later point at the work dir."""
    for role in ("features", "image", "prob_map", "superpixels"):
        value = getattr(manifest, role)
        if value:
            setattr(manifest, role, manifest.resolve_path(value))
    manifest.masks = [manifest.resolve_path(p) for p in manifest.masks]
    return manifest


def _load_manifest_for(manifest_path: str | Path, out_dir: str | Path) -> RunManifest:
    """The updated manifest from a previous stage run, if one exists."""
    source = read_manifest(manifest_path)
    updated = Path(out_dir) / source.image_id / "manifest.json"
    if updated.is_file() and updated.resolve() != Path(manifest_path).resolve():
        return _absolutize_inputs(read_manifest(updated))
    return _absolutize_inputs(source)


def _effective_hp(manifest: RunManifest, cfg: PipelineConfig) -> HyperParams:
    return cfg.hyperparams if cfg.hyperparams is not None else manifest.hyperparams


def _load_features(manifest: RunManifest) -> np.ndarray:
    f = read_array(manifest.require("features"))
    if f.ndim != 3 or f.shape[0] != f.shape[1] or f.dtype != np.float32:
        raise ShapeMismatch(f"features must be [N,N,E] float32, got {f.dtype} {f.shape}")
    return f


def _load_prob_map(manifest: RunManifest) -> np.ndarray:
    pm = read_array(manifest.require("prob_map"))
    if pm.ndim != 2 or pm.dtype != np.float32:
        raise ShapeMismatch(f"prob map must be [H,W] float32, got {pm.dtype} {pm.shape}")
    return pm


def _load_mask_stack(path: str, expect_hw: tuple[int, int] | None = None) -> np.ndarray:
    stack = read_array(path)
    if stack.ndim != 3 or stack.dtype != np.uint8:
        raise ShapeMismatch(f"mask stack must be [M,H,W] uint8, got {stack.dtype} {stack.shape}")
    if expect_hw is not None and tuple(stack.shape[1:]) != tuple(expect_hw):
        raise ShapeMismatch(f"mask stack extent {stack.shape[1:]} vs expected {expect_hw}")
    return stack


def stage_affinity(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    features = _load_features(manifest)
    a = aff.build_affinity_map(features)
    path = work / "affinity.npy"
    write_array(a, path)
    manifest.extra["affinity"] = path.name
    return {
        "n": int(a.shape[0]),
        "a_min": float(a.min()),
        "a_max": float(a.max()),
        "affinity": str(path),
    }


def stage_multicut(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    features = _load_features(manifest)
    hp = _effective_hp(manifest, cfg)
    graph = aff.build_multicut_graph(features, hp.tau_cut)
    part = multicut.solve_multicut(graph)
    masks = multicut.partition_to_masks(part, features.shape[0])
    records = [
        {"cluster": cid, "foreground": bool(multicut.is_foreground(m))}
        for cid, m in enumerate(masks)
    ]
    stack = np.stack(masks).astype(np.uint8)
    stack_path = work / "masks_raw.npy"
    write_array(stack, stack_path)
    report = {
        "image_id": manifest.image_id,
        "clusters": part.k,
        "objective": multicut.multicut_objective(graph, part),
        "masks": records,
    }
    report_path = work / "multicut_report.json"
    write_json(report, report_path)
    manifest.extra["masks_raw"] = stack_path.name
    manifest.extra["multicut_report"] = report_path.name
    return {
        "clusters": part.k,
        "foreground": sum(r["foreground"] for r in records),
        "objective": report["objective"],
        "masks_raw": str(stack_path),
    }


def stage_filter(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    hp = _effective_hp(manifest, cfg)
    a = read_array(manifest.require("affinity"))
    stack = _load_mask_stack(manifest.require("masks_raw"), expect_hw=a.shape)
    with open(manifest.require("multicut_report"), "r", encoding="utf-8") as fh:
        mc_report = json.load(fh)
    flags = [rec["foreground"] for rec in mc_report["masks"]]
    if len(flags) != stack.shape[0]:
        raise ShapeMismatch(
            f"multicut report lists {len(flags)} masks, stack has {stack.shape[0]}"
        )

    candidates = [
        (idx, stack[idx]) for idx, fg in enumerate(flags) if fg
    ]
    scored = [
        maskfilter.ScoredMask(mask=m, rating=maskfilter.rate_mask(m, a))
        for _, m in candidates
    ]
    maskfilter.select_top_q(scored, hp.q_percent)

    kept = [sm.mask for sm in scored if sm.kept]
    filtered = (
        np.stack(kept).astype(np.uint8)
        if kept
        else np.zeros((0,) + a.shape, dtype=np.uint8)
    )
    stack_path = work / "masks_filtered.npy"
    write_array(filtered, stack_path)
    report = {
        "image_id": manifest.image_id,
        "q_percent": hp.q_percent,
        "masks": [
            {
                "mask_index": i,
                "cluster": candidates[i][0],
                "rating": None if math.isinf(sm.rating) else sm.rating,
                "kept": sm.kept,
            }
            for i, sm in enumerate(scored)
        ],
    }
    report_path = work / "filter_report.json"
    write_json(report, report_path)
    manifest.extra["masks_filtered"] = stack_path.name
    manifest.extra["filter_report"] = report_path.name
    return {
        "total": len(scored),
        "kept": len(kept),
        "masks_filtered": str(stack_path),
    }


def stage_superpixel(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    image = read_image_ppm(manifest.require("image"))
    if manifest.superpixels:
        labels = read_array(manifest.require("superpixels"))
        if labels.ndim != 2 or labels.dtype != np.int32:
            raise ShapeMismatch(
                f"superpixel labels must be [H,W] int32, got {labels.dtype} {labels.shape}"
            )
        seg = superpixel.ingest_labels(labels, image)
    else:
        seg = superpixel.snic_superpixels(image, cfg.k_target)
    labels_path = work / "superpixels.npy"
    write_array(seg.labels.astype(np.int32), labels_path)
    stats_path = work / "superpixels.json"
    write_json(seg.stats_dict(), stats_path)
    manifest.extra["superpixels_out"] = labels_path.name
    manifest.extra["superpixel_stats"] = stats_path.name
    return {"k": seg.k, "superpixels": str(labels_path)}


def stage_sgm(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    hp = _effective_hp(manifest, cfg)
    pm = _load_prob_map(manifest)
    image = read_image_ppm(manifest.require("image"))
    if image.shape[:2] != pm.shape:
        raise ShapeMismatch(f"image extent {image.shape[:2]} vs prob map {pm.shape}")
    labels = read_array(manifest.require("superpixels_out"))
    seg = superpixel.ingest_labels(labels, image)
    stack = _load_mask_stack(manifest.require("masks_filtered"))

    losses = []
    for i in range(stack.shape[0]):
        pixel_mask = sgmloss.upsample_nearest(stack[i], pm.shape)
        report = sgmloss.sgm_loss(pm, pixel_mask, seg, image, hp)
        grad_path = work / f"sgm_grad_{i:03d}.npy"
        write_array(report.grad, grad_path)
        losses.append(
            {
                "mask_index": i,
                "hard": report.hard,
                "soft": report.soft,
                "total": report.total,
                "n_s": report.n_labeled,
                "flags": report.flags,
                "grad": grad_path.name,
            }
        )
    report_path = work / "sgm_report.json"
    write_json({"image_id": manifest.image_id, "losses": losses}, report_path)
    manifest.extra["sgm_report"] = report_path.name
    return {"n_masks": len(losses), "sgm_report": str(report_path)}


def _load_checkpoint_stacks(manifest: RunManifest, hp: HyperParams, pm_shape):
    if len(manifest.masks) != hp.e_checkpoints:
        raise MissingInput(
            f"expected {hp.e_checkpoints} checkpoint mask stacks in 'masks', "
            f"got {len(manifest.masks)}"
        )
    for p in manifest.masks:
        if not Path(p).is_file():
            raise MissingInput(f"checkpoint stack not found: {p}")
    return [_load_mask_stack(p, expect_hw=pm_shape) for p in manifest.masks]


def stage_stability(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    hp = _effective_hp(manifest, cfg)
    pm = _load_prob_map(manifest)
    stacks = _load_checkpoint_stacks(manifest, hp, pm.shape)
    last = stacks[-1]
    intermediates = [[s[j] for j in range(s.shape[0])] for s in stacks[:-1]]

    raw = [
        selftrain.stability_score(last[i], intermediates)
        for i in range(last.shape[0])
    ]
    normalized = selftrain.minmax_normalize(raw, hp.epsilon) if raw else []
    scores = [
        {"mask_index": i, "z": raw[i], "z_bar": normalized[i]}
        for i in range(len(raw))
    ]
    stability_path = work / "stability.json"
    write_json(
        {"image_id": manifest.image_id, "e": hp.e_checkpoints, "scores": scores},
        stability_path,
    )
    manifest.extra["stability_report"] = stability_path.name
    return {"n_masks": last.shape[0], "stability_report": str(stability_path)}


def stage_adaptive(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    hp = _effective_hp(manifest, cfg)
    pm = _load_prob_map(manifest)
    stacks = _load_checkpoint_stacks(manifest, hp, pm.shape)
    last = stacks[-1]
    with open(manifest.require("stability_report"), "r", encoding="utf-8") as fh:
        stability = json.load(fh)
    normalized = [rec["z_bar"] for rec in stability["scores"]]
    if len(normalized) != last.shape[0]:
        raise ShapeMismatch(
            f"stability report covers {len(normalized)} masks, "
            f"final checkpoint has {last.shape[0]}"
        )

    losses = []
    for i in range(last.shape[0]):
        wm = selftrain.weight_map(last[i], normalized[i], hp.d_hat)
        value, grad = selftrain.adaptive_loss(pm, last[i], wm)
        wm_path = work / f"weight_map_{i:03d}.npy"
        grad_path = work / f"ad_grad_{i:03d}.npy"
        write_array(wm.astype(np.float32), wm_path)
        write_array(grad.astype(np.float32), grad_path)
        losses.append(
            {
                "mask_index": i,
                "value": value,
                "z_bar": normalized[i],
                "weight_map": wm_path.name,
                "grad": grad_path.name,
            }
        )
    adaptive_path = work / "adaptive_report.json"
    write_json({"image_id": manifest.image_id, "losses": losses}, adaptive_path)
    manifest.extra["adaptive_report"] = adaptive_path.name
    return {"n_masks": last.shape[0], "adaptive_report": str(adaptive_path)}


def stage_selftrain(manifest: RunManifest, cfg: PipelineConfig, work: Path) -> dict:
    summary = stage_stability(manifest, cfg, work)
    summary.update(stage_adaptive(manifest, cfg, work))
    return summary


_STAGE_FUNCS = {
    "affinity": stage_affinity,
    "multicut": stage_multicut,
    "filter": stage_filter,
    "superpixel": stage_superpixel,
    "sgm": stage_sgm,
    "selftrain": stage_selftrain,
    "stability": stage_stability,
    "adaptive": stage_adaptive,
}

# 'stability' and 'adaptive' are individually addressable halves of the
# 'selftrain' pipeline stage
_SUBSTAGE_DEPS = {"stability": (), "adaptive": ("stability_report",)}


def run_stage(
    cfg: PipelineConfig,
    manifest: RunManifest,
    stage: str,
    out_dir: str | Path,
) -> dict:
    """Run one stage, persisting outputs and the updated manifest."""
    deps = _STAGE_DEPS.get(stage, _SUBSTAGE_DEPS.get(stage))
    if deps is None:
        raise InputError(f"unknown stage {stage!r}")
    work = _work_dir(out_dir, manifest)
    manifest.base_dir = str(work)  # inputs were absolutized at load
    for dep in deps:
        if dep not in manifest.extra or not Path(
            manifest.resolve_path(manifest.extra[dep])
        ).is_file():
            raise StageDependencyViolation(
                f"stage {stage!r} needs {dep!r}; run its producing stage first"
            )
    summary = _STAGE_FUNCS[stage](manifest, cfg, work)
    write_manifest(manifest, work / "manifest.json")
    return summary


# execution order when several stages are requested at once
_RUN_ORDER = ("affinity", "multicut", "filter", "superpixel", "sgm",
              "stability", "adaptive", "selftrain")


def run_stages(
    cfg: PipelineConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    stages: tuple[str, ...] | None = None,
) -> dict:
    """Run the configured stages for one manifest, in canonical order."""
    manifest = _load_manifest_for(manifest_path, out_dir)
    selected = stages if stages is not None else cfg.stages
    unknown = [s for s in selected if s not in _STAGE_FUNCS]
    if unknown:
        raise InputError(f"unknown stages: {unknown}")
    selected = tuple(s for s in _RUN_ORDER if s in selected)
    summaries = {}
    for stage in selected:
        summaries[stage] = run_stage(cfg, manifest, stage, out_dir)
    return {"image_id": manifest.image_id, "stages": summaries}


def run_many(
    cfg: PipelineConfig,
    manifest_paths: list[str],
    out_dir: str | Path,
    stages: tuple[str, ...] | None = None,
    jobs: int = 1,
) -> list[dict]:
    """Process several manifests concurrently; results follow input order."""
    if jobs < 1:
        raise InputError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(manifest_paths) <= 1:
        return [run_stages(cfg, p, out_dir, stages) for p in manifest_paths]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [
            pool.submit(run_stages, cfg, p, out_dir, stages)
            for p in manifest_paths
        ]
        return [f.result() for f in futures]


def _hsv_to_rgb(h_deg: float, s: float, v: float) -> np.ndarray:
    h = (h_deg % 360.0) / 60.0
    c = v * s
    x = c * (1.0 - abs(h % 2.0 - 1.0))
    sector = int(h)
    r, g, b = [
        (c, x, 0.0), (x, c, 0.0), (0.0, c, x),
        (0.0, x, c), (x, 0.0, c), (c, 0.0, x),
    ][sector % 6]
    m = v - c
    return np.array([r + m, g + m, b + m])


def render_overlay(image: np.ndarray, masks: list[np.ndarray]) -> np.ndarray:
    """Alpha-blend one deterministic color per mask over the image.

    Hues follow the golden-angle sequence by mask index, so any number
    of masks stay visually distinct; blending is 50/50.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError(f"expected [H,W,3] image, got shape {image.shape}")
    out = image.astype(np.float64)
    for i, mask in enumerate(masks):
        mask = np.asarray(mask)
        if mask.shape != image.shape[:2]:
            raise ShapeMismatch(f"mask {mask.shape} vs image {image.shape[:2]}")
        color = 255.0 * _hsv_to_rgb(i * _GOLDEN_ANGLE, 0.85, 1.0)
        sel = mask != 0
        out[sel] = 0.5 * out[sel] + 0.5 * color
    return np.rint(out).astype(np.uint8)


def run_overlay(manifest_path: str | Path, out_dir: str | Path) -> dict:
    """Render kept (or raw foreground) masks over the source image."""
    manifest = _load_manifest_for(manifest_path, out_dir)
    work = _work_dir(out_dir, manifest)
    manifest.base_dir = str(work)
    image = read_image_ppm(manifest.require("image"))
    if "masks_filtered" in manifest.extra:
        stack = _load_mask_stack(manifest.require("masks_filtered"))
    elif "masks_raw" in manifest.extra:
        stack = _load_mask_stack(manifest.require("masks_raw"))
        with open(manifest.require("multicut_report"), "r", encoding="utf-8") as fh:
            flags = [rec["foreground"] for rec in json.load(fh)["masks"]]
        stack = stack[[i for i, fg in enumerate(flags) if fg]]
    elif manifest.masks:
        if not Path(manifest.masks[-1]).is_file():
            raise MissingInput(f"mask stack not found: {manifest.masks[-1]}")
        stack = _load_mask_stack(manifest.masks[-1])
    else:
        raise MissingInput(
            f"manifest {manifest.image_id!r} has no mask stack to overlay"
        )
    pixel_masks = [
        sgmloss.upsample_nearest(stack[i], image.shape[:2])
        for i in range(stack.shape[0])
    ]
    overlay = render_overlay(image, pixel_masks)
    path = work / "overlay.ppm"
    write_image_ppm(overlay, path)
    manifest.extra["overlay"] = path.name
    write_manifest(manifest, work / "manifest.json")
    return {"image_id": manifest.image_id, "overlay": str(path), "n_masks": len(pixel_masks)}
