"""Reconstruction-sensitivity scoring, sorting, and bandwidth cropping.

A feature dimension's sensitivity is the increase in reconstruction MSE
when that dimension is nudged by +epsilon before decoding.  Dimensions are
sorted by descending sensitivity; under a bandwidth ratio r only the top
K = floor(r * d) survive.  Scoring costs exactly d + 1 decoder calls.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .nnkit import mse

Decoder = Callable[[np.ndarray], np.ndarray]


def sensitivity_scores(f: np.ndarray, decode: Decoder, target: np.ndarray,
                       eps: float) -> np.ndarray:
    """Per-dimension loss increase under a +eps perturbation.

    ``decode`` maps a feature vector to a flat reconstruction compared
    against ``target`` (same length) by MSE.  d + 1 decode calls total.
    """
    if eps <= 0.0:
        raise ValueError(f"eps must be positive, got {eps}")
    f = np.asarray(f, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64).reshape(-1)

    base_rec = decode(f)
    if not np.all(np.isfinite(base_rec)):
        raise NumericError("decoder produced non-finite output at the base point")
    base = mse(target, np.asarray(base_rec).reshape(-1))

    scores = np.empty(f.shape[0])
    for i in range(f.shape[0]):
        perturbed = f.copy()
        perturbed[i] += eps
        rec = decode(perturbed)
        if not np.all(np.isfinite(rec)):
            raise NumericError(f"decoder produced non-finite output at dimension {i}")
        scores[i] = mse(target, np.asarray(rec).reshape(-1)) - base
    return scores


def rank(scores: np.ndarray) -> np.ndarray:
    """Permutation sorting dimensions by descending score, ties by index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NumericError("sensitivity scores contain non-finite values")
    return np.argsort(-scores, kind="stable")


@dataclass(frozen=True)
class CropSpec:
    ratio: float
    preserved: int
    mask: np.ndarray  # 1 for kept positions of the sorted vector


def crop(f: np.ndarray, perm: np.ndarray, ratio: float) -> tuple[np.ndarray, CropSpec]:
    """Reorder ``f`` by ``perm`` and keep the first floor(ratio * d) entries.

    Equivalent to masking the sorted vector and dropping its zero tail.
    """
    f = np.asarray(f, dtype=np.float64)
    d = f.shape[0]
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    preserved = math.floor(ratio * d)
    if preserved == 0:
        raise ValueError(f"ratio {ratio} preserves zero dimensions for d={d}")
    mask = np.zeros(d, dtype=np.int8)
    mask[:preserved] = 1
    payload = f[perm][:preserved]
    return payload, CropSpec(ratio=ratio, preserved=preserved, mask=mask)


def restore(payload: np.ndarray, perm: np.ndarray, d: int) -> np.ndarray:
    """Zero-pad a cropped payload and undo the sort permutation."""
    payload = np.asarray(payload, dtype=np.float64)
    perm = np.asarray(perm)
    if payload.shape[0] < 1 or payload.shape[0] > d:
        raise ShapeError(f"payload length {payload.shape[0]} not in [1, {d}]")
    if perm.shape != (d,) or not np.array_equal(np.sort(perm), np.arange(d)):
        raise ShapeError(f"permutation is not a bijection on 0..{d - 1}")
    sorted_full = np.zeros(d)
    sorted_full[:payload.shape[0]] = payload
    out = np.zeros(d)
    out[perm] = sorted_full
    return out


def calibrate_ranking(images: Sequence, encode: Callable[[np.ndarray], np.ndarray],
                      decode: Decoder, eps: float) -> np.ndarray:
    """Dataset-averaged sensitivity permutation (static, shared offline)."""
    if len(images) == 0:
        raise ValueError("calibration dataset is empty")
    total = None
    for img in images:
        flat = img.flat() if hasattr(img, "flat") and callable(img.flat) else np.asarray(img).reshape(-1)
        f = encode(flat)
        scores = sensitivity_scores(f, decode, flat, eps)
        total = scores if total is None else total + scores
    return rank(total / len(images))


# ---------------------------------------------------------------------------
# Calibrated-ranking file format
# ---------------------------------------------------------------------------


def _ranking_body(perm: np.ndarray, eps: float) -> str:
    return (f"d={perm.shape[0]}\n"
            + " ".join(str(int(i)) for i in perm) + "\n"
            + f"epsilon={eps!r}\n")


def save_ranking(path, perm: np.ndarray, eps: float) -> None:
    body = _ranking_body(np.asarray(perm), eps)
    crc = zlib.crc32(body.encode("ascii")) & 0xFFFFFFFF
    Path(path).write_text(body + f"crc32={crc:08x}\n", encoding="ascii")


def load_ranking(path) -> tuple[np.ndarray, float]:
    text = Path(path).read_text(encoding="ascii")
    lines = text.splitlines()
    if len(lines) != 4:
        raise DataError(f"{path}: expected 4 lines, found {len(lines)}")
    body = "\n".join(lines[:3]) + "\n"
    if not lines[3].startswith("crc32="):
        raise DataError(f"{path}: missing checksum line")
    expect = int(lines[3][len("crc32="):], 16)
    actual = zlib.crc32(body.encode("ascii")) & 0xFFFFFFFF
    if expect != actual:
        raise DataError(f"{path}: checksum mismatch ({actual:08x} != {expect:08x})")
    if not lines[0].startswith("d="):
        raise DataError(f"{path}: missing dimension line")
    d = int(lines[0][2:])
    perm = np.array([int(tok) for tok in lines[1].split()])
    if perm.shape != (d,) or not np.array_equal(np.sort(perm), np.arange(d)):
        raise DataError(f"{path}: permutation is not a bijection on 0..{d - 1}")
    if not lines[2].startswith("epsilon="):
        raise DataError(f"{path}: missing epsilon line")
    eps = float(lines[2][len("epsilon="):])
    return perm, eps
