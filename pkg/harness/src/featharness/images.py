"""Image loading and interchange-image emission.

Inputs may be anything Pillow reads (JPEG, PNG, PPM, ...). Every image
is center-cropped to a square whose side is a multiple of the patch
size, so the feature grid invariant N = side / patch_size holds exactly.
The pipeline ingests only binary PPM, so the cropped image is re-emitted
in that form alongside the arrays.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ImageDecodeFailure


def load_image_rgb(path: str | Path) -> np.ndarray:
    """Decode any Pillow-supported image to [H, W, 3] uint8."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageDecodeFailure(path, exc) from None


def center_crop_to_grid(image: np.ndarray, patch_size: int, side: int | None = None) -> np.ndarray:
    """Square center crop with side a multiple of patch_size.

    When ``side`` is given the image is resized (bilinear) after the
    crop, e.g. 224 for the ViT-B/8 default; otherwise the largest
    fitting multiple is kept without resampling.
    """
    h, w = image.shape[:2]
    target = min(h, w) // patch_size * patch_size
    if target < patch_size:
        raise ImageDecodeFailure("<array>", f"image {h}x{w} smaller than one patch")
    y0 = (h - target) // 2
    x0 = (w - target) // 2
    crop = image[y0 : y0 + target, x0 : x0 + target]
    if side is not None and side != target:
        if side % patch_size:
            raise ValueError(f"side {side} not a multiple of patch size {patch_size}")
        pil = Image.fromarray(crop).resize((side, side), Image.BILINEAR)
        crop = np.asarray(pil, dtype=np.uint8)
    return crop


def write_ppm(image: np.ndarray, path: str | Path) -> None:
    """Binary P6, maxval 255: the only image form the pipeline reads."""
    h, w = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image.astype(np.uint8)).tobytes())
