"""Bit-exact I/O for convolutional feature tensors (HFT1 files).

An HFT1 file is little-endian throughout: a 24-byte header (magic "HFT1",
version u32=1, W u32, H u32, K u32, reserved u32=0) followed by W*H*K
float32 values, channel-contiguous per spatial location, locations ordered
by l = i + (j-1)*W.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    EmptyFeatureSet,
    IoFailure,
    NegativeOrNonFiniteValue,
    TruncatedFile,
)

MAGIC = b"HFT1"
VERSION = 1
HEADER = struct.Struct("<4sIIIII")  # magic, version, W, H, K, reserved
HEADER_SIZE = HEADER.size  # 24


@dataclass(frozen=True)
class FeatureTensor:
    """Activations of one convolutional layer for one image.

    ``values`` has shape (W*H, K): row l-1 holds the K channel values of
    spatial location l = i + (j-1)*W. All values are finite, non-negative
    float32 (post-ReLU).
    """

    width: int
    height: int
    channels: int
    values: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.channels < 1:
            raise ValueError(
                f"tensor dims must be positive, got "
                f"{self.width}x{self.height}x{self.channels}"
            )
        v = np.asarray(self.values, dtype=np.float32)
        expected = (self.width * self.height, self.channels)
        if v.size != expected[0] * expected[1]:
            raise ValueError(
                f"expected {expected[0] * expected[1]} values, got {v.size}"
            )
        v = np.ascontiguousarray(v.reshape(expected))
        if not np.all(np.isfinite(v)):
            raise ValueError("tensor contains NaN or Inf")
        if np.any(v < 0):
            raise ValueError("tensor contains negative values")
        object.__setattr__(self, "values", v)

    @property
    def locations(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class FeatureSet:
    """Nonzero local features of one image, in location order.

    ``features`` has shape (n, K); every row has positive Euclidean norm.
    ``dropped_count`` counts the all-zero rows removed, so that
    n + dropped_count equals W*H of the source tensor.
    """

    features: np.ndarray
    dropped_count: int

    def __post_init__(self):
        f = np.asarray(self.features)
        if f.ndim != 2:
            raise ValueError("features must be a 2-d array")
        object.__setattr__(self, "features", f)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def read_feature_tensor(path: str | Path) -> FeatureTensor:
    """Read an HFT1 file, rejecting malformed headers and bad values.

    Raises BadMagic, TruncatedFile or NegativeOrNonFiniteValue; each names
    the byte offset of the first violation.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e

    if len(data) < HEADER_SIZE:
        raise TruncatedFile(
            f"{path}: file ends inside the {HEADER_SIZE}-byte header",
            offset=len(data),
        )
    magic, version, w, h, k, reserved = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, got {magic!r}", offset=0)
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported version {version}", offset=4)
    for field_offset, name, value in ((8, "W", w), (12, "H", h), (16, "K", k)):
        if value == 0:
            raise BadMagic(f"{path}: {name} must be positive", offset=field_offset)
    if reserved != 0:
        raise BadMagic(f"{path}: reserved field must be 0, got {reserved}", offset=20)

    count = w * h * k
    expected_len = HEADER_SIZE + 4 * count
    if len(data) < expected_len:
        raise TruncatedFile(
            f"{path}: declared {count} float32 values but payload holds "
            f"{(len(data) - HEADER_SIZE) // 4}",
            offset=len(data),
        )
    if len(data) > expected_len:
        raise TruncatedFile(
            f"{path}: {len(data) - expected_len} trailing bytes after payload",
            offset=expected_len,
        )

    values = np.frombuffer(data, dtype="<f4", count=count, offset=HEADER_SIZE)
    bad = ~np.isfinite(values) | (values < 0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NegativeOrNonFiniteValue(
            f"{path}: value {values[i]!r} at index {i}",
            offset=HEADER_SIZE + 4 * i,
        )
    return FeatureTensor(w, h, k, values.reshape(w * h, k).copy())


def write_feature_tensor(t: FeatureTensor, path: str | Path) -> None:
    """Write ``t`` atomically (temp file + rename) in the HFT1 layout."""
    path = Path(path)
    header = HEADER.pack(MAGIC, VERSION, t.width, t.height, t.channels, 0)
    payload = np.ascontiguousarray(t.values, dtype="<f4").tobytes()
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(header)
                f.write(payload)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def flatten(t: FeatureTensor) -> FeatureSet:
    """Turn a tensor into its feature set, dropping all-zero vectors.

    Row order follows l = i + (j-1)*W. All-zero rows (possible after ReLU)
    have no cosine direction and are removed; their count is kept for
    diagnostics.
    """
    nonzero = np.any(t.values != 0, axis=1)
    kept = t.values[nonzero]
    dropped = int(t.locations - kept.shape[0])
    if kept.shape[0] == 0:
        raise EmptyFeatureSet("every feature vector in the tensor is all-zero")
    return FeatureSet(features=kept, dropped_count=dropped)
