"""Bit-exact interchange I/O: arrays, PPM images, run manifests.

Arrays travel as NPY version 1.0 files restricted to little-endian
float32 / uint8 / int32, C order. The restriction keeps the format
trivially parseable from any language while still being readable by
numpy itself. Images are binary PPM (P6, maxval 255) only. Manifests
are flat JSON with fixed keys.

All writes are deterministic: equal values produce equal bytes.
"""

from __future__ import annotations

import ast
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import (
    InputError,
    IoFailure,
    MalformedHeader,
    MissingInput,
    TruncatedPayload,
    UnsupportedDtype,
    UnsupportedMaxval,
)

_MAGIC = b"\x93NUMPY"
_VERSION = b"\x01\x00"
_HEADER_START = len(_MAGIC) + len(_VERSION) + 2  # magic + version + uint16 length

# descr string <-> numpy dtype, whitelist only
_DESCR_TO_DTYPE = {
    "<f4": np.dtype("<f4"),
    "|u1": np.dtype("u1"),
    "u1": np.dtype("u1"),
    "<i4": np.dtype("<i4"),
}
_DTYPE_TO_DESCR = {
    np.dtype("float32"): "<f4",
    np.dtype("uint8"): "|u1",
    np.dtype("int32"): "<i4",
}

SUPPORTED_DTYPES = ("float32", "uint8", "int32")


def _shape_repr(shape: tuple[int, ...]) -> str:
    if len(shape) == 1:
        return f"({shape[0]},)"
    return "(" + ", ".join(str(int(s)) for s in shape) + ")"


def write_array(a: np.ndarray, path: str | Path) -> None:
    """Serialize ``a`` to ``path`` in the restricted NPY v1.0 layout.

    The dtype must be one of float32, uint8, int32; the data is written
    C-contiguous in little-endian byte order. Raises ``UnsupportedDtype``
    for any other dtype and ``IoFailure`` if the OS rejects the write.
    """
    a = np.asarray(a)
    if a.dtype not in _DTYPE_TO_DESCR:
        raise UnsupportedDtype(str(a.dtype), 0)
    descr = _DTYPE_TO_DESCR[a.dtype]
    header = (
        f"{{'descr': '{descr}', 'fortran_order': False, "
        f"'shape': {_shape_repr(a.shape)}, }}"
    )
    # pad with spaces so that data starts on a 64-byte boundary
    unpadded = _HEADER_START + len(header) + 1
    pad = (64 - unpadded % 64) % 64
    header_bytes = header.encode("ascii") + b" " * pad + b"\n"
    payload = np.ascontiguousarray(a)
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(_VERSION)
            fh.write(struct.pack("<H", len(header_bytes)))
            fh.write(header_bytes)
            fh.write(payload.tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_array(path: str | Path) -> np.ndarray:
    """Read an interchange array, reproducing dtype, shape, and bytes exactly.

    Raises ``MalformedHeader``, ``UnsupportedDtype``, or
    ``TruncatedPayload``; each carries the byte offset of the failure.
    """
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if len(raw) < len(_MAGIC) or raw[: len(_MAGIC)] != _MAGIC:
        raise MalformedHeader("bad magic", 0)
    if len(raw) < len(_MAGIC) + 2 or raw[len(_MAGIC) : len(_MAGIC) + 2] != _VERSION:
        raise MalformedHeader("unsupported version", len(_MAGIC))
    if len(raw) < _HEADER_START:
        raise MalformedHeader("missing header length", len(_MAGIC) + 2)
    (hlen,) = struct.unpack("<H", raw[len(_MAGIC) + 2 : _HEADER_START])
    data_start = _HEADER_START + hlen
    if len(raw) < data_start:
        raise MalformedHeader("header shorter than declared", _HEADER_START)

    header_text = raw[_HEADER_START:data_start]
    if not header_text.endswith(b"\n"):
        raise MalformedHeader("header not newline-terminated", data_start - 1)
    try:
        meta = ast.literal_eval(header_text.decode("ascii").strip())
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise MalformedHeader(f"unparseable header dict: {exc}", _HEADER_START) from exc
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise MalformedHeader("header keys must be descr/fortran_order/shape", _HEADER_START)
    if meta["fortran_order"] is not False:
        raise MalformedHeader("fortran_order must be False", _HEADER_START)
    descr = meta["descr"]
    if descr not in _DESCR_TO_DTYPE:
        raise UnsupportedDtype(str(descr), _HEADER_START)
    shape = meta["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(s, int) and s >= 0 for s in shape
    ):
        raise MalformedHeader(f"bad shape {shape!r}", _HEADER_START)

    dtype = _DESCR_TO_DTYPE[descr]
    count = math.prod(shape)
    expected = count * dtype.itemsize
    got = len(raw) - data_start
    if got < expected:
        raise TruncatedPayload(expected, got, data_start + got)
    if got > expected:
        raise MalformedHeader(
            f"{got - expected} trailing bytes after payload", data_start + expected
        )
    arr = np.frombuffer(raw[data_start:], dtype=dtype, count=count).reshape(shape)
    return arr.copy()


def _ppm_token(raw: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(raw)
    while pos < n:
        c = raw[pos : pos + 1]
        if c == b"#":
            while pos < n and raw[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not raw[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise MalformedHeader("unexpected end of PPM header", start)
    return raw[start:pos], pos


def read_image_ppm(path: str | Path) -> np.ndarray:
    """Read a binary P6 image as [H, W, 3] uint8, row-major, top-left origin."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc

    if raw[:2] != b"P6":
        raise MalformedHeader("not a binary P6 file", 0)
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _ppm_token(raw, pos)
        if not token.isdigit():
            raise MalformedHeader(f"non-numeric PPM field {token!r}", pos - len(token))
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise UnsupportedMaxval(f"maxval {maxval} != 255")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * 3
    got = len(raw) - pos
    if got < expected:
        raise TruncatedPayload(expected, got, pos + got)
    data = np.frombuffer(raw[pos : pos + expected], dtype=np.uint8)
    return data.reshape(height, width, 3).copy()


def write_image_ppm(image: np.ndarray, path: str | Path) -> None:
    """Write [H, W, 3] uint8 as binary P6, maxval 255."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise InputError(f"expected [H,W,3] uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(image).tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


@dataclass
class HyperParams:
    """Pipeline hyperparameters with their published defaults."""

    q_percent: float = 60.0
    alpha1: float = 100.0
    alpha2: float = 200.0
    e_checkpoints: int = 3
    epsilon: float = 0.6
    d_hat: float = 3.0
    tau_cut: float = 0.5

    def __post_init__(self):
        if not 0 < self.q_percent <= 100:
            raise InputError(f"q_percent must be in (0, 100], got {self.q_percent}")
        if self.alpha1 <= 0:
            raise InputError(f"alpha1 must be positive, got {self.alpha1}")
        if self.alpha2 <= 0:
            raise InputError(f"alpha2 must be positive, got {self.alpha2}")
        if int(self.e_checkpoints) != self.e_checkpoints or self.e_checkpoints < 2:
            raise InputError(f"e_checkpoints must be an integer >= 2, got {self.e_checkpoints}")
        if not 0 < self.epsilon < 1:
            raise InputError(f"epsilon must be in (0, 1), got {self.epsilon}")
        if self.d_hat <= 0:
            raise InputError(f"d_hat must be positive, got {self.d_hat}")

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f for f in cls.__dataclass_fields__}  # noqa: C416
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# manifest roles whose value is a single array/image path
_SCALAR_ROLES = ("features", "image", "prob_map", "superpixels")


@dataclass
class RunManifest:
    """Per-image record tying together every file a pipeline run touches.

    ``masks`` is a list of mask-stack paths; when the self-training
    stages run it holds one stack per checkpoint, ordered
    checkpoint_1..checkpoint_e with the final checkpoint last.
    ``extra`` collects stage-output roles added as the pipeline runs.
    """

    image_id: str
    features: str | None = None
    image: str | None = None
    prob_map: str | None = None
    masks: list[str] = field(default_factory=list)
    superpixels: str | None = None
    hyperparams: HyperParams = field(default_factory=HyperParams)
    extra: dict = field(default_factory=dict)
    # directory relative paths resolve against; set when read from disk,
    # never serialized (keeps output trees relocatable and reruns
    # byte-identical)
    base_dir: str | None = field(default=None, compare=False)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        d = dict(d)
        if "image_id" not in d or not isinstance(d["image_id"], str):
            raise InputError("manifest must carry a string 'image_id'")
        hp = d.pop("hyperparams", None)
        fields_ = {"image_id": d.pop("image_id")}
        for role in _SCALAR_ROLES:
            fields_[role] = d.pop(role, None)
        masks = d.pop("masks", [])
        if masks is None:
            masks = []
        if not isinstance(masks, list):
            raise InputError("'masks' must be a list of paths")
        fields_["masks"] = list(masks)
        fields_["hyperparams"] = (
            HyperParams.from_dict(hp) if isinstance(hp, dict) else HyperParams()
        )
        fields_["extra"] = d  # whatever remains is stage-output bookkeeping
        return cls(**fields_)

    def to_dict(self) -> dict:
        d = {"image_id": self.image_id}
        for role in _SCALAR_ROLES:
            value = getattr(self, role)
            if value is not None:
                d[role] = value
        d["masks"] = list(self.masks)
        d["hyperparams"] = self.hyperparams.to_dict()
        d.update(self.extra)
        return d

    def resolve_path(self, value: str) -> str:
        """Resolve a manifest entry; relative paths are anchored at base_dir."""
        p = Path(value)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return str(p)

    def require(self, role: str) -> str:
        """Path registered for ``role``; MissingInput if absent on disk."""
        value = getattr(self, role, None) or self.extra.get(role)
        if not value:
            raise MissingInput(f"manifest {self.image_id!r} has no {role!r} entry")
        resolved = self.resolve_path(value)
        if not Path(resolved).is_file():
            raise MissingInput(f"{role!r} file not found: {resolved}")
        return resolved


def read_manifest(path: str | Path) -> RunManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {path} is not valid JSON: {exc}") from exc
    manifest = RunManifest.from_dict(payload)
    manifest.base_dir = str(Path(path).resolve().parent)
    return manifest


def write_manifest(manifest: RunManifest, path: str | Path) -> None:
    write_json(manifest.to_dict(), path)


def write_json(obj, path: str | Path) -> None:
    """Canonical JSON serialization: sorted keys, no whitespace jitter."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
