"""Kronecker orthogonal embedding and projection separation.

Each stream rides an orthonormal signature vector: embedding expands a
K-vector F into F kron u (block i is F_i * u), superposition of two such
embeddings is power-normalized to unit mean square, and the receiver
recovers either stream by per-block inner products.  Orthonormality of the
signatures makes the two embeddings exactly orthogonal regardless of how
correlated the streams are.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FrameError, ShapeError

ORTHO_TOL = 1e-12
NORM_TOL = 1e-9
SCALE_FLOOR = 1e-12


@dataclass(frozen=True)
class OrthoBasis:
    u1: np.ndarray
    u2: np.ndarray

    def __post_init__(self):
        u1 = np.asarray(self.u1, dtype=np.float64)
        u2 = np.asarray(self.u2, dtype=np.float64)
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)
        if u1.ndim != 1 or u1.shape != u2.shape or u1.shape[0] < 2:
            raise ShapeError(f"basis vectors must share a length >= 2: {u1.shape} vs {u2.shape}")
        if abs(float(u1 @ u2)) > ORTHO_TOL:
            raise ValueError(f"basis vectors are not orthogonal: |u1.u2| = {abs(float(u1 @ u2)):.3e}")
        for name, u in (("u1", u1), ("u2", u2)):
            norm = float(np.linalg.norm(u))
            if abs(norm - 1.0) > NORM_TOL:
                raise ValueError(f"{name} is not unit norm: |{name}| = {norm!r}")

    @property
    def q(self) -> int:
        return self.u1.shape[0]


def default_basis() -> OrthoBasis:
    return OrthoBasis(u1=np.array([0.5, -0.5, 0.5, -0.5]),
                      u2=np.array([0.5, 0.5, -0.5, -0.5]))


def random_basis(q: int, rng: np.random.Generator) -> OrthoBasis:
    """Random orthonormal pair via Gram-Schmidt (repeated for digit hygiene)."""
    a = rng.standard_normal(q)
    a /= np.linalg.norm(a)
    b = rng.standard_normal(q)
    for _ in range(2):
        b -= (a @ b) * a
    b /= np.linalg.norm(b)
    return OrthoBasis(u1=a, u2=b)


@dataclass
class MixedFrame:
    """Power-normalized superposition of two embedded streams."""

    payload: np.ndarray
    norm_scale: float
    n_blocks: int
    q: int


def embed(f: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Kronecker expansion: block i of the output is f[i] * u."""
    return np.kron(np.asarray(f, dtype=np.float64), np.asarray(u, dtype=np.float64))


def mix(fs_emb: np.ndarray, fd_emb: np.ndarray, q: int,
        normalize: bool = True) -> MixedFrame:
    """Superpose two embedded streams and normalize to unit mean square."""
    fs_emb = np.asarray(fs_emb, dtype=np.float64)
    fd_emb = np.asarray(fd_emb, dtype=np.float64)
    if fs_emb.shape != fd_emb.shape:
        raise ShapeError(f"embedded stream lengths differ: {fs_emb.shape} vs {fd_emb.shape}")
    if fs_emb.shape[0] % q != 0:
        raise ShapeError(f"embedded length {fs_emb.shape[0]} not divisible by q={q}")
    total = fs_emb + fd_emb
    if normalize:
        scale = max(float(np.sqrt(np.mean(total ** 2))), SCALE_FLOOR)
        payload = total / scale
    else:
        scale = 1.0
        payload = total
    return MixedFrame(payload=payload, norm_scale=scale,
                      n_blocks=fs_emb.shape[0] // q, q=q)


def separate(frame: MixedFrame, u: np.ndarray) -> np.ndarray:
    """Recover one stream: de-normalize, then project each block onto u."""
    payload = np.asarray(frame.payload, dtype=np.float64)
    if payload.shape[0] % frame.q != 0:
        raise ShapeError(f"payload length {payload.shape[0]} not divisible by q={frame.q}")
    blocks = (payload * frame.norm_scale).reshape(-1, frame.q)
    return blocks @ np.asarray(u, dtype=np.float64)


def verify_lemma1(fs: np.ndarray, fd: np.ndarray, basis: OrthoBasis) -> float:
    """|<fs kron u1, fd kron u2>|; vanishes for any orthogonal signature pair."""
    return abs(float(embed(fs, basis.u1) @ embed(fd, basis.u2)))


# ---------------------------------------------------------------------------
# Frame wire format
# ---------------------------------------------------------------------------
#
# Header (error-free metadata side channel):
#   magic "SMDMA-FR", version u16, d u32, K u32, q u16, ranking mode u8
#   (0 = calibrated, 1 = per_frame), permutation u32 x d when per_frame,
#   norm_scale f64.  Payload: little-endian f64 x (q * K).

FRAME_MAGIC = b"SMDMA-FR"
FRAME_VERSION = 1
_MODE_CODE = {"calibrated": 0, "per_frame": 1}
_CODE_MODE = {v: k for k, v in _MODE_CODE.items()}


def encode_frame(frame: MixedFrame, d: int, ranking_mode: str,
                 perm: np.ndarray | None) -> bytes:
    if ranking_mode not in _MODE_CODE:
        raise FrameError(f"unknown ranking mode {ranking_mode!r}")
    if ranking_mode == "per_frame":
        if perm is None or len(perm) != d:
            raise FrameError("per_frame frames must carry a full permutation")
    parts = [FRAME_MAGIC,
             struct.pack("<HIIHB", FRAME_VERSION, d, frame.n_blocks, frame.q,
                         _MODE_CODE[ranking_mode])]
    if ranking_mode == "per_frame":
        parts.append(np.asarray(perm, dtype="<u4").tobytes())
    parts.append(struct.pack("<d", frame.norm_scale))
    parts.append(np.ascontiguousarray(frame.payload, "<f8").tobytes())
    return b"".join(parts)


def decode_frame(buf: bytes) -> tuple[MixedFrame, int, str, np.ndarray | None]:
    if buf[:len(FRAME_MAGIC)] != FRAME_MAGIC:
        raise FrameError("bad frame magic")
    pos = len(FRAME_MAGIC)
    try:
        version, d, n_blocks, q, mode_code = struct.unpack_from("<HIIHB", buf, pos)
    except struct.error as exc:
        raise FrameError(f"truncated frame header: {exc}") from None
    pos += struct.calcsize("<HIIHB")
    if version != FRAME_VERSION:
        raise FrameError(f"unsupported frame version {version}")
    mode = _CODE_MODE.get(mode_code)
    if mode is None:
        raise FrameError(f"unknown ranking mode code {mode_code}")
    perm = None
    if mode == "per_frame":
        raw = buf[pos:pos + 4 * d]
        if len(raw) != 4 * d:
            raise FrameError("truncated permutation")
        perm = np.frombuffer(raw, dtype="<u4").astype(np.int64)
        pos += 4 * d
        if not np.array_equal(np.sort(perm), np.arange(d)):
            raise FrameError("frame permutation is not a bijection")
    try:
        (norm_scale,) = struct.unpack_from("<d", buf, pos)
    except struct.error:
        raise FrameError("truncated norm_scale") from None
    pos += 8
    need = 8 * q * n_blocks
    raw = buf[pos:pos + need]
    if len(raw) != need:
        raise FrameError(f"truncated payload: need {need} bytes, have {len(raw)}")
    payload = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if len(buf) != pos + need:
        raise FrameError("trailing bytes after frame payload")
    return MixedFrame(payload=payload, norm_scale=norm_scale,
                      n_blocks=n_blocks, q=q), d, mode, perm
