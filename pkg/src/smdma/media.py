"""Image I/O, synthetic correlated pairs, and quality metrics.

Images live in memory as float64 samples in [0, 1]; binary PGM (P5) and
PPM (P6) with maxval 255 are the only on-disk formats, so every dataset
byte is auditable and round trips exactly.  PSNR and SSIM follow the usual
8-bit conventions (pixel scale 0..255, SSIM from whole-image statistics).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PnmError, ShapeError
from .rng import stream


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C image, samples in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise ShapeError(f"image must be (H, W, 1|3), got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def flat(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    def clipped(self) -> np.ndarray:
        return np.clip(self.pixels, 0.0, 1.0)


def image_from_flat(values: np.ndarray, height: int, width: int, channels: int) -> ImageTensor:
    return ImageTensor(np.asarray(values, dtype=np.float64).reshape(height, width, channels))


@dataclass(frozen=True)
class MetricConfig:
    """8-bit metric conventions: peak 255, SSIM constants from k1/k2."""

    max_value: float = 255.0
    k1: float = 0.01
    k2: float = 0.03

    @property
    def c1(self) -> float:
        return (self.k1 * self.max_value) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.max_value) ** 2


DEFAULT_METRICS = MetricConfig()


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _skip_ws(buf: bytes, pos: int) -> int:
    while pos < len(buf) and buf[pos:pos + 1] in (b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c"):
        pos += 1
    return pos


def _token(buf: bytes, pos: int, what: str) -> tuple[bytes, int]:
    pos = _skip_ws(buf, pos)
    start = pos
    while pos < len(buf) and buf[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c"):
        pos += 1
    if start == pos:
        raise PnmError(f"missing {what} token", start)
    return buf[start:pos], pos


def _int_token(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    tok, end = _token(buf, pos, what)
    if not tok.isdigit():
        raise PnmError(f"{what} is not a decimal integer: {tok!r}", end - len(tok))
    return int(tok), end


def load_pnm(path) -> ImageTensor:
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255."""
    buf = Path(path).read_bytes()
    magic, pos = _token(buf, 0, "magic")
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PnmError(f"unsupported magic {magic!r}", 0)
    width, pos = _int_token(buf, pos, "width")
    height, pos = _int_token(buf, pos, "height")
    if width == 0 or height == 0:
        raise PnmError("zero dimensions", pos)
    maxval, pos = _int_token(buf, pos, "maxval")
    if maxval != 255:
        raise PnmError(f"unsupported maxval {maxval}", pos)
    if pos >= len(buf) or buf[pos:pos + 1] not in (b" ", b"\t", b"\r", b"\n", b"\x0b", b"\x0c"):
        raise PnmError("missing single whitespace after header", pos)
    pos += 1
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise PnmError(
            f"truncated payload: need {need} bytes, have {len(payload)}",
            pos + len(payload))
    if len(buf) > pos + need:
        raise PnmError("trailing bytes after payload", pos + need)
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return ImageTensor(arr.reshape(height, width, channels))


def save_pnm(image: ImageTensor, path) -> None:
    magic = "P5" if image.channels == 1 else "P6"
    header = f"{magic} {image.width} {image.height} 255\n".encode("ascii")
    payload = np.round(image.clipped() * 255.0).astype(np.uint8).tobytes()
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# Synthetic correlated pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairSpec:
    size: int = 32
    edit_fraction: float = 0.35
    texture_seed: int = 0
    shapes: int = 3
    channels: int = 1

    def __post_init__(self):
        if not 0.0 <= self.edit_fraction <= 1.0:
            raise ValueError(f"edit_fraction must be in [0, 1], got {self.edit_fraction}")


def _texture(size: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    out = np.empty((size, size, channels))
    for ch in range(channels):
        a, b = rng.uniform(0.5, 3.0, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        swirl = rng.uniform(1.0, 4.0)
        field = (0.5
                 + 0.22 * np.sin(2.0 * np.pi * (a * xx + b * yy) + phase)
                 + 0.16 * np.cos(2.0 * np.pi * swirl * xx * yy + phase))
        out[:, :, ch] = field
    return np.clip(out, 0.0, 1.0)


def _draw_shapes(img: np.ndarray, count: int, rng: np.random.Generator) -> None:
    size = img.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(count):
        value = rng.uniform(0.05, 0.95, size=img.shape[2])
        cy, cx = rng.integers(0, size, size=2)
        if rng.random() < 0.5:
            half = int(rng.integers(1, max(2, size // 4)))
            y0, y1 = max(0, cy - half), min(size, cy + half)
            x0, x1 = max(0, cx - half), min(size, cx + half)
            img[y0:y1, x0:x1, :] = value
        else:
            radius = int(rng.integers(1, max(2, size // 4)))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
            img[mask, :] = value


def gen_pair(spec: PairSpec, seed: int) -> tuple[ImageTensor, ImageTensor]:
    """Generate two images sharing content outside an edited region.

    The edit covers round(edit_fraction * H * W) pixels (a contiguous
    scan-order run); outside it the two images are pixel-identical, inside
    it every pixel is guaranteed to differ.
    """
    if spec.size < 8:
        raise ValueError(f"size {spec.size} too small for shape primitives (need >= 8)")
    rng = stream(seed, "gen-pair", spec.texture_seed)

    s1 = _texture(spec.size, spec.channels, rng)
    _draw_shapes(s1, spec.shapes, rng)
    s1 = np.clip(s1, 0.0, 1.0)

    n_pixels = spec.size * spec.size
    n_edit = int(round(spec.edit_fraction * n_pixels))
    s2 = s1.copy()
    if n_edit > 0:
        start = int(rng.integers(0, n_pixels - n_edit + 1))
        mask = np.zeros(n_pixels, dtype=bool)
        mask[start:start + n_edit] = True
        mask = mask.reshape(spec.size, spec.size)

        alt = _texture(spec.size, spec.channels, rng)
        _draw_shapes(alt, max(1, spec.shapes // 2), rng)
        alt = np.clip(alt, 0.0, 1.0)
        # Force a visible difference on every edited pixel.
        close = np.abs(alt - s1) < 0.05
        alt = np.where(close, np.where(s1 < 0.5, s1 + 0.3, s1 - 0.3), alt)
        s2[mask, :] = alt[mask, :]

    return ImageTensor(s1), ImageTensor(s2)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _check_same_shape(a: ImageTensor, b: ImageTensor) -> None:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"image shapes differ: {a.pixels.shape} vs {b.pixels.shape}")


def pixel_mse(a: ImageTensor, b: ImageTensor, cfg: MetricConfig = DEFAULT_METRICS) -> float:
    """Mean squared error on the 0..max_value pixel scale."""
    _check_same_shape(a, b)
    diff = (a.clipped() - b.clipped()) * cfg.max_value
    return float(np.mean(diff ** 2))


def psnr(a: ImageTensor, b: ImageTensor, cfg: MetricConfig = DEFAULT_METRICS) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images."""
    err = pixel_mse(a, b, cfg)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.max_value ** 2 / err)


def psnr_from_mse(err: float, cfg: MetricConfig = DEFAULT_METRICS) -> float:
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.max_value ** 2 / err)


def ssim(a: ImageTensor, b: ImageTensor, cfg: MetricConfig = DEFAULT_METRICS) -> float:
    """Whole-image SSIM with population statistics, averaged over channels."""
    _check_same_shape(a, b)
    xs = a.clipped() * cfg.max_value
    ys = b.clipped() * cfg.max_value
    vals = []
    for ch in range(a.channels):
        x = xs[:, :, ch].reshape(-1)
        y = ys[:, :, ch].reshape(-1)
        mu_x = x.mean()
        mu_y = y.mean()
        var_x = np.mean((x - mu_x) ** 2)
        var_y = np.mean((y - mu_y) ** 2)
        cov = np.mean((x - mu_x) * (y - mu_y))
        num = (2.0 * mu_x * mu_y + cfg.c1) * (2.0 * cov + cfg.c2)
        den = (mu_x ** 2 + mu_y ** 2 + cfg.c1) * (var_x + var_y + cfg.c2)
        vals.append(num / den)
    return float(np.mean(vals))


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


def format_ssim(value: float) -> str:
    return f"{value:.6f}"
