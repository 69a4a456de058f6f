"""MNIST IDX ingestion, IID sharding and per-shard symbol counts."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
N_CLASSES = 10


class IdxFormatError(ValueError):
    """Bad magic number or malformed header."""


class IdxConsistencyError(ValueError):
    """Image and label files disagree on the sample count."""


@dataclass(frozen=True)
class Shard:
    """One client's local dataset.

    ``inputs`` has shape ``(n, U_x, V_x)`` with values in [0, 1]; ``labels``
    is one-hot with shape ``(n, C)`` (a ``C x 1`` label matrix per sample).
    """

    client: int
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise IdxConsistencyError(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def symbol_count(self) -> int:
        return symbol_count(self)

    def head(self, n: int) -> "Shard":
        return Shard(self.client, self.inputs[:n], self.labels[:n])


def _open(path) -> bytes:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (EOFError, gzip.BadGzipFile) as exc:
            raise OSError(f"{path}: truncated or corrupt gzip stream") from exc
    return raw


def read_idx_images(path) -> np.ndarray:
    raw = _open(path)
    if len(raw) < 16:
        raise OSError(f"{path}: truncated image header")
    magic, n, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"{path}: image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
    need = 16 + n * rows * cols
    if len(raw) < need:
        raise OSError(f"{path}: truncated, {len(raw)} bytes < {need}")
    return np.frombuffer(raw, dtype=np.uint8, count=n * rows * cols, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    raw = _open(path)
    if len(raw) < 8:
        raise OSError(f"{path}: truncated label header")
    magic, n = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise IdxFormatError(f"{path}: label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
    if len(raw) < 8 + n:
        raise OSError(f"{path}: truncated, {len(raw)} bytes < {8 + n}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=8)
    if labels.size and labels.max() >= N_CLASSES:
        raise IdxFormatError(f"{path}: label {labels.max()} outside 0..{N_CLASSES - 1}")
    return labels


def write_idx(image_path, label_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as IDX.

    Paths ending in ``.gz`` are gzip-compressed.
    """
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, labels.size) + labels.tobytes()
    for path, blob in ((image_path, img), (label_path, lab)):
        path = Path(path)
        if path.suffix == ".gz":
            blob = gzip.compress(blob, mtime=0)
        path.write_bytes(blob)


def one_hot(labels: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def load_idx(image_path, label_path) -> Shard:
    """All samples of an IDX image/label pair, pixels scaled to [0, 1]."""
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxConsistencyError(
            f"{image_path} has {images.shape[0]} images but {label_path} has {labels.shape[0]} labels"
        )
    return Shard(-1, images.astype(np.float64) / 255.0, one_hot(labels))


def downsample(shard: Shard, factor: int = 2) -> Shard:
    """Average-pool inputs by ``factor`` in both spatial dimensions."""
    n, rows, cols = shard.inputs.shape
    if rows % factor or cols % factor:
        raise ValueError(f"{rows}x{cols} is not divisible by {factor}")
    pooled = shard.inputs.reshape(n, rows // factor, factor, cols // factor, factor).mean(axis=(2, 4))
    return Shard(shard.client, pooled, shard.labels)


def subset(shard: Shard, idx) -> Shard:
    return Shard(shard.client, shard.inputs[idx], shard.labels[idx])


def concat(shards, client: int = -1) -> Shard:
    return Shard(
        client,
        np.concatenate([s.inputs for s in shards]),
        np.concatenate([s.labels for s in shards]),
    )


def partition_iid(samples: Shard, K: int, seed: int) -> list[Shard]:
    """Seeded shuffle then equal contiguous split; the last shard takes the remainder.

    Clients are numbered ``1..K``.
    """
    n = len(samples)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise ValueError(f"cannot split {n} samples across {K} clients")
    order = np.random.default_rng(seed).permutation(n)
    size = n // K
    out = []
    for k in range(K):
        stop = n if k == K - 1 else (k + 1) * size
        idx = order[k * size : stop]
        out.append(Shard(k + 1, samples.inputs[idx], samples.labels[idx]))
    return out


def symbol_count(shard: Shard) -> int:
    """``D_k * (U_x V_x + U_y V_y)`` in exact integer arithmetic."""
    n = len(shard)
    if n == 0:
        return 0
    per_input = int(np.prod(shard.inputs.shape[1:], dtype=np.int64))
    per_label = int(np.prod(shard.labels.shape[1:], dtype=np.int64))
    return int(n) * (per_input + per_label)
