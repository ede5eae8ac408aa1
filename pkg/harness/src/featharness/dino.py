"""Self-supervised ViT feature extraction (torch hub DINO models).

The default export is the chosen block's key projections, the variant
that works best for downstream grouping; ``variant="tokens"`` switches
to the raw output tokens of that block. Everything torch-related stays
behind this module so the rest of the harness (and its stub mode) never
imports it.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelLoadFailure

_HUB_REPO = "facebookresearch/dino:main"

# ImageNet statistics used by DINO's own eval transforms
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


def load_model(model_id: str):
    try:
        import torch
    except ImportError as exc:
        raise ModelLoadFailure(f"torch is not installed: {exc}") from exc
    try:
        model = torch.hub.load(_HUB_REPO, model_id)
    except Exception as exc:  # hub raises everything from URLError to RuntimeError
        raise ModelLoadFailure(f"cannot load {model_id!r} from {_HUB_REPO}: {exc}") from exc
    model.eval()
    return model


def extract_patch_features(
    model,
    image: np.ndarray,
    patch_size: int,
    layer: int = -1,
    variant: str = "keys",
) -> np.ndarray:
    """[N, N, E] float32 patch embeddings for one square image.

    ``layer`` indexes the transformer blocks (negative from the end).
    """
    import torch

    if variant not in ("keys", "tokens"):
        raise ValueError(f"variant must be 'keys' or 'tokens', got {variant!r}")
    side = image.shape[0]
    n = side // patch_size
    x = (image.astype(np.float32) / 255.0 - _MEAN) / _STD
    batch = torch.from_numpy(x.transpose(2, 0, 1)[None])

    block = model.blocks[layer]
    captured: dict[str, torch.Tensor] = {}

    if variant == "keys":

        def hook(_module, _inputs, output):
            captured["qkv"] = output.detach()

        handle = block.attn.qkv.register_forward_hook(hook)
        try:
            with torch.no_grad():
                model(batch)
        finally:
            handle.remove()
        qkv = captured["qkv"]  # [1, 1+N*N, 3*E_heads]
        tokens = qkv.shape[1]
        emb = qkv.reshape(1, tokens, 3, -1)[0, :, 1, :]  # the K projection
    else:

        def hook(_module, _inputs, output):
            captured["out"] = output.detach()

        handle = block.register_forward_hook(hook)
        try:
            with torch.no_grad():
                model(batch)
        finally:
            handle.remove()
        emb = captured["out"][0]

    patch_tokens = emb[1:]  # drop the class token
    if patch_tokens.shape[0] != n * n:
        raise ModelLoadFailure(
            f"model produced {patch_tokens.shape[0]} patch tokens, expected {n * n}"
        )
    return patch_tokens.reshape(n, n, -1).cpu().numpy().astype(np.float32)


def extract_prob_map(model, image: np.ndarray) -> list[np.ndarray]:
    """Per-slot foreground probability maps from a user checkpoint.

    The checkpoint must be a callable mapping a [1, 3, H, W] float
    tensor to per-slot logits or probabilities [1, M, H, W]; anything
    else is reported as a load failure.
    """
    import torch

    x = (image.astype(np.float32) / 255.0 - _MEAN) / _STD
    batch = torch.from_numpy(x.transpose(2, 0, 1)[None])
    with torch.no_grad():
        out = model(batch)
    if not torch.is_tensor(out) or out.ndim != 4:
        raise ModelLoadFailure("checkpoint output is not a [1, M, H, W] tensor")
    out = out[0]
    if out.min() < 0 or out.max() > 1:
        out = torch.sigmoid(out)
    return [slot.cpu().numpy().astype(np.float64) for slot in out]
