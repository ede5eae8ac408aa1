"""Two console entry points: export-features and export-probmaps."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import HarnessError
from .export import ExportSpec, export_features, export_probmaps


def _collect_images(images: str) -> list[str]:
    p = Path(images)
    if p.is_dir():
        exts = {".jpg", ".jpeg", ".png", ".ppm", ".bmp"}
        found = sorted(str(f) for f in p.iterdir() if f.suffix.lower() in exts)
        if not found:
            raise SystemExit(f"no images found under {images}")
        return found
    if p.is_file():
        return [str(p)]
    raise SystemExit(f"no such file or directory: {images}")


def export_features_main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="export-features",
        description="Export ViT patch embeddings into the pipeline interchange format.",
    )
    parser.add_argument("--model", default="dino_vitb8", help="torch hub model id")
    parser.add_argument("--images", required=True, help="image file or directory")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--patch-size", type=int, default=8)
    parser.add_argument("--layer", type=int, default=-1,
                        help="transformer block to read (negative from the end)")
    parser.add_argument("--variant", choices=("keys", "tokens"), default="keys",
                        help="key projections (default) or raw block tokens")
    parser.add_argument("--side", type=int, default=224,
                        help="square resize after crop; 0 keeps native size")
    parser.add_argument("--stub", action="store_true",
                        help="no model: deterministic features from color statistics")
    parser.add_argument("--feature-dim", type=int, default=64,
                        help="embedding width in stub mode")
    args = parser.parse_args(argv)

    spec = ExportSpec(
        model_id=args.model,
        patch_size=args.patch_size,
        layer=args.layer,
        variant=args.variant,
        image_paths=_collect_images(args.images),
        side=args.side or None,
        stub_mode=args.stub,
        feature_dim=args.feature_dim,
    )
    try:
        manifests = export_features(spec, args.out)
    except HarnessError as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}))
        sys.exit(1)
    print(json.dumps({"command": "export-features",
                      "manifests": [str(m) for m in manifests]}, sort_keys=True))


def export_probmaps_main(argv=None) -> None:
    parser = argparse.ArgumentParser(
        prog="export-probmaps",
        description="Export per-checkpoint probability maps and predicted masks.",
    )
    parser.add_argument("--ckpt", default=None, help="segmentation checkpoint path")
    parser.add_argument("--tag", required=True, help="checkpoint_K, 1 <= K <= e")
    parser.add_argument("--images", required=True, help="image file or directory")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--e-total", type=int, default=3,
                        help="total number of checkpoints being exported")
    parser.add_argument("--patch-size", type=int, default=8)
    parser.add_argument("--side", type=int, default=224)
    parser.add_argument("--stub", action="store_true",
                        help="no checkpoint: smooth bumps over bright regions")
    parser.add_argument("--stub-constant", type=float, default=None,
                        help="stub emits this constant probability everywhere")
    args = parser.parse_args(argv)

    try:
        manifests = export_probmaps(
            image_paths=_collect_images(args.images),
            out_dir=args.out,
            tag=args.tag,
            e_total=args.e_total,
            ckpt_path=args.ckpt,
            stub_mode=args.stub,
            stub_constant=args.stub_constant,
            patch_size=args.patch_size,
            side=args.side or None,
        )
    except (HarnessError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}))
        sys.exit(1)
    print(json.dumps({"command": "export-probmaps", "tag": args.tag,
                      "manifests": [str(m) for m in manifests]}, sort_keys=True))
