"""Shared / differential feature decomposition.

Two feature vectors split into a shared component (the first user's vector,
taken wholesale) and a thresholded element-wise difference; entries whose
absolute difference does not exceed the threshold are treated as common
content and zeroed.  The inverse is additive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class FusionConfig:
    tau: float = 0.05

    def __post_init__(self):
        if self.tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class FusionPair:
    shared: np.ndarray
    delta: np.ndarray

    @property
    def dim(self) -> int:
        return self.shared.shape[0]


def fuse(f1: np.ndarray, f2: np.ndarray, cfg: FusionConfig) -> FusionPair:
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape or f1.ndim != 1:
        raise ShapeError(f"feature shapes differ: {f1.shape} vs {f2.shape}")
    diff = f2 - f1
    # Strict inequality: ties at exactly tau count as shared content.
    delta = np.where(np.abs(diff) > cfg.tau, diff, 0.0)
    return FusionPair(shared=f1.copy(), delta=delta)


def defuse(pair: FusionPair) -> tuple[np.ndarray, np.ndarray]:
    return pair.shared.copy(), pair.shared + pair.delta
