"""Datasets, the LIFT tensor/checkpoint formats, and PGM map export.

Binary layouts (all little-endian)::

    TensorFile   "LIFT" | version u8 = 1 | dtype u8 (1 = float32) | rank u8
                 | rank × u32 extents | row-major float32 payload
    Checkpoint   "LIFC" | version u8 = 1 | meta_len u32 | meta (UTF-8 JSON)
                 | count u32 | count × (name_len u16 | name UTF-8 | offset u64)
                 | concatenated TensorFile blocks at the listed absolute offsets
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.linalg import hadamard

TENSOR_MAGIC = b"LIFT"
CKPT_MAGIC = b"LIFC"
FORMAT_VERSION = 1
DTYPE_FLOAT32 = 1

CIFAR_RECORD = 3073


class FormatError(ValueError):
    """Base class for every reader/writer rejection."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class DtypeError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class MismatchError(FormatError):
    """Checkpoint parameter names or shapes disagree with the target model."""


class CifarError(FormatError):
    pass


class PgmError(FormatError):
    pass


@dataclass
class Dataset:
    """Images ``N×3×H×W`` in [0, 1] (or normalized) and integer labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images vs {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index) -> tuple[np.ndarray, int]:
        return self.images[index], int(self.labels[index])

    def subset(self, index) -> "Dataset":
        return Dataset(self.images[index], self.labels[index])


# CIFAR-10 binary


def read_cifar(raw: bytes, normalize: bool | tuple = False) -> Dataset:
    """Parse CIFAR-10 binary records (label byte + R, G, B planes of 32×32).

    ``normalize=True`` standardizes each channel with statistics of this
    file; a ``(mean, std)`` pair of 3-vectors uses fixed constants instead.
    """
    raw = bytes(raw)
    if len(raw) % CIFAR_RECORD:
        raise CifarError(f"{len(raw)} bytes is not a whole number of {CIFAR_RECORD}-byte records")
    buf = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = buf[:, 0].astype(np.int64)
    if labels.size and labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise CifarError(f"record {bad} has label byte {labels[bad]} (CIFAR-10 labels are 0..9)")
    images = buf[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    ds = Dataset(images, labels)
    if normalize is not False and len(images):
        ds, _ = standardize(ds, None if normalize is True else normalize)
    return ds


def channel_stats(images: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of an ``N×C×H×W`` batch (zero std becomes 1)."""
    mean = images.mean(axis=(0, 2, 3), dtype=np.float64)
    std = images.std(axis=(0, 2, 3), dtype=np.float64)
    return mean.astype(np.float32), np.where(std > 0, std, 1.0).astype(np.float32)


def standardize(dataset: Dataset, stats=None) -> tuple[Dataset, tuple[np.ndarray, np.ndarray]]:
    """Shift and scale each channel; ``stats`` defaults to the dataset's own.

    Returns the new dataset and the ``(mean, std)`` used, so a test split can
    reuse the training statistics.
    """
    if stats is None:
        stats = channel_stats(dataset.images)
    mean, std = (np.asarray(v, dtype=np.float32).reshape(1, -1, 1, 1) for v in stats)
    images = ((dataset.images - mean) / std).astype(np.float32)
    return Dataset(images, dataset.labels), (mean.reshape(-1), std.reshape(-1))


def write_cifar(dataset: Dataset) -> bytes:
    """Encode ``[0, 1]`` images as CIFAR-10 records (pixels rounded to bytes)."""
    n = len(dataset)
    out = np.empty((n, CIFAR_RECORD), dtype=np.uint8)
    out[:, 0] = dataset.labels
    pixels = np.clip(np.rint(dataset.images.reshape(n, -1) * 255.0), 0, 255)
    out[:, 1:] = pixels.astype(np.uint8)
    return out.tobytes()


# synthetic locality dataset


MOTIF_SIZE = 5
MOTIF_CONTRAST = 1.0


def motif_table(num_classes: int) -> np.ndarray:
    """``K×5×5`` binary motifs from rows of a 32×32 Sylvester Hadamard matrix."""
    if not 1 <= num_classes <= 16:
        raise ValueError(f"motif table holds 16 patterns, {num_classes} requested")
    rows = hadamard(32)[1 : num_classes + 1, : MOTIF_SIZE * MOTIF_SIZE]
    return (rows > 0).astype(np.float32).reshape(num_classes, MOTIF_SIZE, MOTIF_SIZE)


def motif_origins(image_size: int = 32, patch_size: int = 4) -> np.ndarray:
    """Admissible top-left pixel positions of a stamped motif.

    Origins sit half a patch off the lattice, so every motif straddles a 2×2
    block of patches and no single patch holds enough of it to name the class.
    """
    off = patch_size // 2
    starts = np.arange(off, image_size - MOTIF_SIZE + 1, patch_size)
    return starts


def gen_synthetic(
    seed: int,
    n_samples: int,
    num_classes: int,
    image_size: int = 32,
    patch_size: int = 4,
    contrast: float = MOTIF_CONTRAST,
    background: str = "uniform",
) -> Dataset:
    """Uniform-noise images, each carrying one class motif at a random lattice site.

    Motif pixels take the two levels ``0.5 ± contrast/2`` and are stamped
    exactly on all three channels. ``background="binary"`` draws the noise from
    ``{0, 1}`` instead of ``[0, 1)``, so motif pixels carry no level cue and a
    single patch's slice of the motif also occurs by chance. A pure function of ``(seed, n_samples,
    num_classes)``, the geometry and the contrast. Labels are exactly balanced
    (up to ``n mod K``) and shuffled.
    """
    if not 0.0 < contrast <= 1.0:
        raise ValueError(f"contrast must be in (0, 1], got {contrast}")
    if background not in ("uniform", "binary"):
        raise ValueError(f"unknown background {background!r}")
    motifs = (0.5 + contrast * (motif_table(num_classes) - 0.5)).astype(np.float32)
    starts = motif_origins(image_size, patch_size)
    if starts.size == 0:
        raise ValueError(f"no room for a {MOTIF_SIZE}×{MOTIF_SIZE} motif in a {image_size}² image")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n_samples) % num_classes)
    images = rng.random((n_samples, 3, image_size, image_size), dtype=np.float32)
    if background == "binary":
        images = (images >= 0.5).astype(np.float32)
    rows = rng.choice(starts, size=n_samples)
    cols = rng.choice(starts, size=n_samples)
    for i in range(n_samples):
        r, c = rows[i], cols[i]
        images[i, :, r : r + MOTIF_SIZE, c : c + MOTIF_SIZE] = motifs[labels[i]]
    return Dataset(images, labels)


# LIFT tensor files


_TENSOR_HEAD = struct.Struct("<4sBBB")


def encode_tensor(array) -> bytes:
    arr = np.asarray(array)
    if arr.dtype != np.float32:
        raise DtypeError(f"LIFT stores float32 only, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank exceeds 255")
    head = _TENSOR_HEAD.pack(TENSOR_MAGIC, FORMAT_VERSION, DTYPE_FLOAT32, arr.ndim)
    extents = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + extents + np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()


def decode_tensor(raw: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one TensorFile starting at ``offset``; return the array and the end offset."""
    raw = memoryview(raw)
    if len(raw) - offset < _TENSOR_HEAD.size:
        raise TruncatedError("tensor header truncated")
    magic, version, dtype, rank = _TENSOR_HEAD.unpack_from(raw, offset)
    if magic != TENSOR_MAGIC:
        raise MagicError(f"bad tensor magic {bytes(magic)!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported tensor version {version}")
    if dtype != DTYPE_FLOAT32:
        raise DtypeError(f"unsupported dtype code {dtype}")
    pos = offset + _TENSOR_HEAD.size
    if len(raw) - pos < 4 * rank:
        raise TruncatedError("tensor extents truncated")
    shape = struct.unpack_from(f"<{rank}I", raw, pos)
    pos += 4 * rank
    nbytes = 4 * math.prod(shape)
    if len(raw) - pos < nbytes:
        raise TruncatedError(f"payload needs {nbytes} bytes, {len(raw) - pos} available")
    arr = np.frombuffer(raw[pos : pos + nbytes], dtype="<f4").astype(np.float32).reshape(shape)
    return arr, pos + nbytes


def write_tensor(path, array) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    arr, end = decode_tensor(raw)
    if end != len(raw):
        raise FormatError(f"{len(raw) - end} trailing bytes after tensor")
    return arr


# checkpoints


def encode_checkpoint(tensors: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    names = list(tensors)
    if len(set(names)) != len(names):
        raise FormatError("duplicate tensor names")
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    blocks = [encode_tensor(np.asarray(tensors[n])) for n in names]
    encoded_names = [n.encode() for n in names]
    head = CKPT_MAGIC + struct.pack("<BI", FORMAT_VERSION, len(meta_bytes)) + meta_bytes
    head += struct.pack("<I", len(names))
    manifest_size = sum(2 + len(n) + 8 for n in encoded_names)
    offset = len(head) + manifest_size
    manifest = b""
    for name, block in zip(encoded_names, blocks):
        manifest += struct.pack("<H", len(name)) + name + struct.pack("<Q", offset)
        offset += len(block)
    return head + manifest + b"".join(blocks)


def decode_checkpoint(raw: bytes) -> tuple[dict[str, np.ndarray], dict]:
    raw = bytes(raw)
    if len(raw) < 4:
        raise TruncatedError("checkpoint header truncated")
    if raw[:4] != CKPT_MAGIC:
        raise MagicError(f"bad checkpoint magic {raw[:4]!r}")
    if len(raw) < 9:
        raise TruncatedError("checkpoint header truncated")
    version, meta_len = struct.unpack_from("<BI", raw, 4)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    pos = 9
    if len(raw) < pos + meta_len + 4:
        raise TruncatedError("checkpoint metadata truncated")
    try:
        meta = json.loads(raw[pos : pos + meta_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint metadata: {exc}") from None
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    entries = []
    for _ in range(count):
        if len(raw) < pos + 2:
            raise TruncatedError("manifest truncated")
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if len(raw) < pos + nlen + 8:
            raise TruncatedError("manifest truncated")
        try:
            name = raw[pos : pos + nlen].decode()
        except UnicodeDecodeError:
            raise FormatError("manifest name is not UTF-8") from None
        (off,) = struct.unpack_from("<Q", raw, pos + nlen)
        pos += nlen + 8
        entries.append((name, off))
    tensors: dict[str, np.ndarray] = {}
    for name, off in entries:
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        if off > len(raw):
            raise TruncatedError(f"tensor {name!r} offset {off} beyond end of file")
        tensors[name], _ = decode_tensor(raw, off)
    return tensors, meta


def save_checkpoint(path, params: Mapping, meta: dict | None = None) -> None:
    arrays = {k: (v.data if hasattr(v, "data") and not isinstance(v, np.ndarray) else v) for k, v in params.items()}
    Path(path).write_bytes(encode_checkpoint(arrays, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    return decode_checkpoint(Path(path).read_bytes())


def check_against(tensors: Mapping[str, np.ndarray], shapes: Mapping[str, tuple]) -> None:
    """Raise :class:`MismatchError` unless names and shapes match exactly."""
    missing = sorted(set(shapes) - set(tensors))
    extra = sorted(set(tensors) - set(shapes))
    if missing or extra:
        raise MismatchError(f"checkpoint names differ: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, shape in shapes.items():
        if tuple(tensors[name].shape) != tuple(shape):
            raise MismatchError(f"{name}: checkpoint shape {tensors[name].shape} != model shape {shape}")


def save_dataset(path, dataset: Dataset) -> None:
    """Store a dataset as a checkpoint-format bundle (``images``, ``labels``)."""
    save_checkpoint(
        path,
        {"images": dataset.images.astype(np.float32), "labels": dataset.labels.astype(np.float32)},
        {"kind": "dataset", "count": len(dataset)},
    )


def load_dataset(path) -> Dataset:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "dataset" or set(tensors) != {"images", "labels"}:
        raise FormatError(f"{path} is not a dataset bundle")
    return Dataset(tensors["images"], tensors["labels"].astype(np.int64))


# PGM


def encode_pgm(image) -> bytes:
    """Binary P5 greymap, maxval 255, value ``v`` -> ``round(255 v)``."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise PgmError(f"map must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise PgmError("map values must lie in [0, 1]")
    h, w = arr.shape
    payload = np.rint(arr * 255.0).astype(np.uint8).tobytes()
    return f"P5\n{w} {h}\n255\n".encode() + payload


def write_map_pgm(image, path) -> None:
    Path(path).write_bytes(encode_pgm(image))


def decode_pnm(raw: bytes) -> np.ndarray:
    """Read an 8-bit binary PGM (``H×W``) or PPM (``H×W×3``) as ``uint8``."""
    raw = bytes(raw)
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PgmError("netpbm header truncated")
        fields.append(raw[start:pos])
    pos += 1
    if fields[0] not in (b"P5", b"P6"):
        raise PgmError(f"not a binary PGM/PPM (magic {fields[0]!r})")
    channels = 1 if fields[0] == b"P5" else 3
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise PgmError("malformed netpbm header") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise PgmError(f"unsupported geometry {w}×{h} maxval {maxval}")
    size = w * h * channels
    body = raw[pos : pos + size]
    if len(body) != size:
        raise PgmError("netpbm payload truncated")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(h, w) if channels == 1 else arr.reshape(h, w, 3)


def decode_pgm(raw: bytes) -> np.ndarray:
    arr = decode_pnm(raw)
    if arr.ndim != 2:
        raise PgmError("expected a greymap (P5), got a pixmap")
    return arr


def read_pgm(path) -> np.ndarray:
    return decode_pgm(Path(path).read_bytes())
