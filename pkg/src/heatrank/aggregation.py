"""Pooling of weighted local features into one global image vector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .diffusion import (
    DiffusionConfig,
    heat_weights,
    similarity_matrix,
    temperatures_fast,
)
from .errors import LengthMismatch, ZeroAggregate
from .tensor_io import FeatureSet

#: exponent of the power normalization applied to the aggregate
DEFAULT_ALPHA = 0.5

Stage = Literal["raw-aggregate", "alpha-normalized", "whitened"]


@dataclass(frozen=True)
class ImageVector:
    """A global image descriptor at a known pipeline stage."""

    values: np.ndarray
    stage: Stage

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("image vector must be 1-d")
        if self.stage in ("alpha-normalized", "whitened"):
            norm = np.linalg.norm(v)
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"{self.stage} vector must be unit-norm, got {norm}")
        if self.stage == "alpha-normalized" and v.min(initial=0.0) < 0:
            raise ValueError("alpha-normalized vector must be entrywise >= 0")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def aggregate(fs: FeatureSet, w: np.ndarray, alpha: float = DEFAULT_ALPHA) -> ImageVector:
    """Weighted sum of features, power-normalized elementwise, unit-norm.

    The exponent is applied before any whitening; alpha=1 disables power
    normalization.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (len(fs),):
        raise LengthMismatch(f"{w.shape[0] if w.ndim == 1 else w.shape} weights for {len(fs)} features")
    if w.min(initial=0.0) < 0:
        raise ValueError("weights must be non-negative")
    s = w @ np.asarray(fs.features, dtype=np.float64)
    if not np.any(s > 0):
        raise ZeroAggregate("weighted feature sum is the zero vector")
    v = s**alpha
    return ImageVector(v / np.linalg.norm(v), stage="alpha-normalized")


def hew_vector(
    fs: FeatureSet,
    cfg: DiffusionConfig | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> ImageVector:
    """Heat-weighted image vector: similarities -> temperatures -> 1/psi weights -> aggregate."""
    cfg = cfg or DiffusionConfig()
    psi = temperatures_fast(similarity_matrix(fs), cfg)
    return aggregate(fs, heat_weights(psi), alpha)


def suma_vector(fs: FeatureSet, alpha: float = DEFAULT_ALPHA) -> ImageVector:
    """Unweighted sum-aggregation baseline (all weights 1)."""
    return aggregate(fs, np.ones(len(fs)), alpha)
