"""PCA whitening learned on held-out image vectors.

The model is fit once on aggregated vectors from a held-out collection and
then applied to query/database vectors: center, rotate onto principal
directions, scale by inverse square-root eigenvalues, truncate to the
leading D components, re-normalize.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import ImageVector
from .errors import (
    BadMagic,
    DimensionExceedsModel,
    DimensionMismatch,
    InsufficientTrainingData,
    IoFailure,
    TruncatedFile,
)

PCA_MAGIC = b"HPCA"
PCA_VERSION = 1
_PCA_HEADER = struct.Struct("<4sII")  # magic, version, D0

#: relative eigenvalue floor guarding the inverse square root
DEFAULT_EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class PcaModel:
    """Learned whitening parameters.

    ``rotation`` rows are principal directions in descending eigenvalue
    order; ``scales`` are the matching inverse square-root eigenvalues
    (floored). ``trained_on`` is a free-form label of the fitting dataset.
    """

    mean: np.ndarray
    rotation: np.ndarray
    eigenvalues: np.ndarray
    scales: np.ndarray
    source_dim: int
    trained_on: str = ""

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        d0 = self.source_dim
        if r.shape != (d0, d0):
            raise ValueError(f"rotation must be {d0}x{d0}, got {r.shape}")
        if np.max(np.abs(r @ r.T - np.eye(d0))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        eig = np.asarray(self.eigenvalues, dtype=np.float64)
        if np.any(np.diff(eig) > 0):
            raise ValueError("eigenvalues must be in descending order")
        if not np.all(np.isfinite(self.scales)):
            raise ValueError("scales must be finite")


def _as_matrix(train: Sequence[ImageVector] | np.ndarray) -> np.ndarray:
    if isinstance(train, np.ndarray):
        return np.asarray(train, dtype=np.float64)
    rows = [np.asarray(v.values, dtype=np.float64) for v in train]
    if len(rows) >= 2 and any(r.shape != rows[0].shape for r in rows):
        raise DimensionMismatch("training vectors have mixed dimensions")
    return np.array(rows, dtype=np.float64)


def fit_pca(
    train: Sequence[ImageVector] | np.ndarray,
    eig_floor: float = DEFAULT_EIG_FLOOR,
    trained_on: str = "",
) -> PcaModel:
    """Fit mean, rotation and whitening scales on a vector collection.

    ``eig_floor`` is relative to the largest eigenvalue; pass 0 to disable
    the floor (then the training data must have full-rank covariance).
    """
    x = _as_matrix(train)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientTrainingData(
            f"need at least 2 training vectors, got {x.shape[0] if x.ndim == 2 else 0}"
        )
    n, d0 = x.shape
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / n
    eig, vecs = np.linalg.eigh(cov)
    eig = np.clip(eig[::-1], 0.0, None)  # descending, roundoff negatives to 0
    rot = vecs[:, ::-1].T.copy()  # rows = principal directions
    if eig[0] <= 0:
        raise InsufficientTrainingData("training vectors have zero covariance")
    eig[eig < 1e-14 * eig[0]] = 0.0  # numerical-rank zeroing
    # deterministic sign: largest-magnitude entry of each direction positive
    flip = rot[np.arange(d0), np.abs(rot).argmax(axis=1)] < 0
    rot[flip] *= -1
    floored = eig + eig_floor * eig[0]
    if np.any(floored <= 0):
        raise InsufficientTrainingData(
            "degenerate principal component; use a positive eigenvalue floor"
        )
    scales = 1.0 / np.sqrt(floored)
    return PcaModel(
        mean=mean,
        rotation=rot,
        eigenvalues=eig,
        scales=scales,
        source_dim=d0,
        trained_on=trained_on,
    )


def transform(m: PcaModel, v: ImageVector, d: int | None = None) -> ImageVector:
    """Center, rotate, whiten, keep the first ``d`` components, re-normalize."""
    if d is None:
        d = m.source_dim
    if v.dim != m.source_dim:
        raise DimensionMismatch(
            f"vector has dim {v.dim}, model expects {m.source_dim}"
        )
    if not 1 <= d <= m.source_dim:
        raise DimensionExceedsModel(
            f"requested {d} components from a {m.source_dim}-dim model"
        )
    y = (m.rotation @ (v.values - m.mean)) * m.scales
    y = y[:d]
    norm = np.linalg.norm(y)
    if norm == 0:
        raise ValueError("vector equals the training mean; no whitened direction")
    return ImageVector(y / norm, stage="whitened")


def save_pca(m: PcaModel, path: str | Path) -> None:
    """Write the model in the HPCA layout (little-endian, f64 payload)."""
    path = Path(path)
    blob = _PCA_HEADER.pack(PCA_MAGIC, PCA_VERSION, m.source_dim)
    blob += np.ascontiguousarray(m.mean, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(m.eigenvalues, dtype="<f8").tobytes()
    blob += np.ascontiguousarray(m.rotation, dtype="<f8").tobytes()
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(blob)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def load_pca(path: str | Path, eig_floor: float = DEFAULT_EIG_FLOOR) -> PcaModel:
    """Read an HPCA file; scales are rebuilt from the stored eigenvalues."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if len(data) < _PCA_HEADER.size:
        raise TruncatedFile(f"{path}: file ends inside the header", offset=len(data))
    magic, version, d0 = _PCA_HEADER.unpack_from(data, 0)
    if magic != PCA_MAGIC:
        raise BadMagic(f"{path}: expected magic {PCA_MAGIC!r}, got {magic!r}", offset=0)
    if version != PCA_VERSION:
        raise BadMagic(f"{path}: unsupported version {version}", offset=4)
    expected = _PCA_HEADER.size + 8 * (d0 + d0 + d0 * d0)
    if len(data) != expected:
        raise TruncatedFile(
            f"{path}: expected {expected} bytes for D0={d0}, got {len(data)}",
            offset=min(len(data), expected),
        )
    off = _PCA_HEADER.size
    mean = np.frombuffer(data, dtype="<f8", count=d0, offset=off).copy()
    off += 8 * d0
    eig = np.frombuffer(data, dtype="<f8", count=d0, offset=off).copy()
    off += 8 * d0
    rot = (
        np.frombuffer(data, dtype="<f8", count=d0 * d0, offset=off)
        .reshape(d0, d0)
        .copy()
    )
    floored = eig + eig_floor * (eig[0] if d0 else 0.0)
    if np.any(floored <= 0):
        raise BadMagic(f"{path}: stored eigenvalues are degenerate", offset=None)
    return PcaModel(
        mean=mean,
        rotation=rot,
        eigenvalues=eig,
        scales=1.0 / np.sqrt(floored),
        source_dim=d0,
    )
