"""End-to-end two-user transmitter/receiver, multi-user training, sweeps.

Transmit chain: semantic-encode both images, fuse into shared/differential
streams, sort and crop each at the bandwidth ratio, embed on the two
signature vectors, superpose with power normalization, channel-encode.
Receive chain per user: channel-decode, de-normalize, project out the
needed stream(s), undo the sort, add the difference for user 2, decode,
clamp.  Header metadata (dimensions, permutation, norm scale) rides an
error-free side channel; only the payload sees the fading channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from . import ranking
from .codecs import SemanticCodecConfig, decode_feature, encode_image
from .errors import NumericError
from .fusion import FusionConfig, FusionPair, defuse, fuse
from .media import (DEFAULT_METRICS, ImageTensor, format_psnr, format_ssim,
                    pixel_mse, psnr_from_mse, ssim)
from .nnkit import Adam, Model, mse, mse_grad
from .ortho import MixedFrame, OrthoBasis, default_basis, embed, mix, separate
from .rng import stream

RANKING_MODES = ("calibrated", "per_frame")
COMBINERS = ("geometric", "arithmetic")
SORTINGS = ("sensitivity", "random")
LOSS_GUARD = 1e-12


@dataclass(frozen=True)
class PipelineConfig:
    semantic: SemanticCodecConfig = field(default_factory=SemanticCodecConfig)
    tau: float = 0.05
    ranking_mode: str = "calibrated"
    epsilon: float = 0.01
    ratio: float = 1.0
    basis: OrthoBasis = field(default_factory=default_basis)
    channel_mode: str = "sr_fading"
    sr: ch.SrParams = field(default_factory=ch.SrParams)
    genie_csi: bool = False
    user1_snr: tuple[float, float] = (-10.0, 0.0)
    user2_snr: tuple[float, float] = (0.0, 10.0)
    batch_size: int = 8
    epochs: int = 100
    lr: float = 1e-4
    combiner: str = "geometric"
    normalize: bool = True

    def __post_init__(self):
        if self.ranking_mode not in RANKING_MODES:
            raise ValueError(f"unknown ranking mode {self.ranking_mode!r}")
        if self.combiner not in COMBINERS:
            raise ValueError(f"unknown loss combiner {self.combiner!r}")
        if self.channel_mode not in ch.MODES:
            raise ValueError(f"unknown channel mode {self.channel_mode!r}")
        for name, (lo, hi) in (("user1_snr", self.user1_snr), ("user2_snr", self.user2_snr)):
            if not lo <= hi:
                raise ValueError(f"{name} range is empty: {lo}..{hi}")


@dataclass
class Models:
    sem_enc: Model
    sem_dec: Model
    ch_enc: Model | None = None   # None means an identity channel codec
    ch_dec: Model | None = None


def _apply_codec(model: Model | None, x: np.ndarray) -> np.ndarray:
    return x.copy() if model is None else model.forward(x)


@dataclass
class TxFrame:
    """Everything leaving the transmitter: coded payload plus header."""

    coded: np.ndarray
    mixed: MixedFrame
    d: int
    ranking_mode: str
    perm: np.ndarray
    ratio: float

    @property
    def channel_uses(self) -> int:
        return self.coded.shape[0]


def resolve_perm(s1: ImageTensor, s2: ImageTensor, cfg: PipelineConfig, models: Models,
                 calibrated_perm: np.ndarray | None) -> np.ndarray:
    """The sort permutation both streams use for this frame.

    per_frame mode scores both of the pair's operating points and averages,
    which makes it identical to calibrating on just this pair.
    """
    if cfg.ranking_mode == "calibrated":
        if calibrated_perm is None:
            raise ValueError("calibrated ranking mode requires a calibrated permutation")
        return np.asarray(calibrated_perm)
    total = None
    for img in (s1, s2):
        f = encode_image(models.sem_enc, img)
        scores = ranking.sensitivity_scores(f, models.sem_dec.forward, img.flat(),
                                            cfg.epsilon)
        total = scores if total is None else total + scores
    return ranking.rank(total / 2.0)


def transmit(s1: ImageTensor, s2: ImageTensor, cfg: PipelineConfig, models: Models,
             calibrated_perm: np.ndarray | None = None,
             perm_override: np.ndarray | None = None) -> TxFrame:
    f1 = encode_image(models.sem_enc, s1)
    f2 = encode_image(models.sem_enc, s2)
    pair = fuse(f1, f2, FusionConfig(tau=cfg.tau))

    perm = perm_override if perm_override is not None \
        else resolve_perm(s1, s2, cfg, models, calibrated_perm)
    payload_s, _ = ranking.crop(pair.shared, perm, cfg.ratio)
    payload_d, _ = ranking.crop(pair.delta, perm, cfg.ratio)

    mixed = mix(embed(payload_s, cfg.basis.u1), embed(payload_d, cfg.basis.u2),
                cfg.basis.q, normalize=cfg.normalize)
    coded = _apply_codec(models.ch_enc, mixed.payload)
    return TxFrame(coded=coded, mixed=mixed, d=pair.dim,
                   ranking_mode=cfg.ranking_mode, perm=perm, ratio=cfg.ratio)


def receive(received: np.ndarray, frame: TxFrame, user: int, cfg: PipelineConfig,
            models: Models, gain: float = 1.0) -> ImageTensor:
    if user not in (1, 2):
        raise ValueError(f"user must be 1 or 2, got {user}")
    y = np.asarray(received, dtype=np.float64)
    if cfg.genie_csi and gain != 1.0:
        y = y / math.sqrt(gain)
    z = _apply_codec(models.ch_dec, y)
    rx = MixedFrame(payload=z, norm_scale=frame.mixed.norm_scale,
                    n_blocks=frame.mixed.n_blocks, q=frame.mixed.q)
    shared = ranking.restore(separate(rx, cfg.basis.u1), frame.perm, frame.d)
    if user == 1:
        f_hat = shared
    else:
        delta = ranking.restore(separate(rx, cfg.basis.u2), frame.perm, frame.d)
        f_hat = defuse(FusionPair(shared=shared, delta=delta))[1]
    return decode_feature(models.sem_dec, f_hat, cfg.semantic, clamp=True)


# ---------------------------------------------------------------------------
# Multi-user loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LossReport:
    losses: tuple[float, ...]
    combined: float
    grads: tuple[float, ...]
    combiner: str


def combined_loss(losses, combiner: str = "geometric") -> LossReport:
    """Combine per-user losses; gradients are with respect to each L_i.

    geometric: (prod L_i)^(1/M), gradient L_all / (M * max(L_i, guard));
    arithmetic: plain mean with 1/M gradients.
    """
    values = tuple(float(v) for v in losses)
    if len(values) == 0:
        raise ValueError("need at least one loss")
    if any(v < 0.0 for v in values):
        raise ValueError(f"losses must be non-negative, got {values}")
    m = len(values)
    if combiner == "arithmetic":
        return LossReport(values, sum(values) / m, tuple(1.0 / m for _ in values),
                          combiner)
    if combiner != "geometric":
        raise ValueError(f"unknown combiner {combiner!r}")
    product = math.prod(values)
    combined = product ** (1.0 / m)
    grads = tuple(combined / (m * max(v, LOSS_GUARD)) for v in values)
    return LossReport(values, combined, grads, combiner)


# ---------------------------------------------------------------------------
# Channel-codec training
# ---------------------------------------------------------------------------


@dataclass
class ChannelTrainHistory:
    combined: list[float] = field(default_factory=list)
    user1: list[float] = field(default_factory=list)
    user2: list[float] = field(default_factory=list)


def train_channel(z_vectors, cfg: PipelineConfig, ch_enc: Model, ch_dec: Model,
                  seed: int) -> ChannelTrainHistory:
    """Train the channel codec in place against both users' channels.

    Each batch draws one SNR per user from its configured range, one fading
    gain per frame, reconstructs through the shared decoder, and steps Adam
    on the combined loss.  Deterministic given (dataset order, seed).
    """
    if len(z_vectors) == 0:
        raise ValueError("channel training dataset is empty")
    history = ChannelTrainHistory()
    if cfg.epochs == 0:
        return history
    order_rng = stream(seed, "channel-order")
    snr_rng = stream(seed, "channel-snr")
    noise_rng = stream(seed, "channel-noise")
    opt_enc = Adam(ch_enc, lr=cfg.lr)
    opt_dec = Adam(ch_dec, lr=cfg.lr)

    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(z_vectors))
        epoch_all, epoch_u1, epoch_u2 = [], [], []
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            snr1 = snr_rng.uniform(*cfg.user1_snr)
            snr2 = snr_rng.uniform(*cfg.user2_snr)
            report = _channel_batch_step(
                [z_vectors[i] for i in batch], (snr1, snr2), cfg,
                ch_enc, ch_dec, opt_enc, opt_dec, noise_rng)
            if not math.isfinite(report.combined):
                raise NumericError(
                    f"channel training diverged at epoch {epoch}, batch {lo // cfg.batch_size}")
            epoch_all.append(report.combined)
            epoch_u1.append(report.losses[0])
            epoch_u2.append(report.losses[1])
        history.combined.append(float(np.mean(epoch_all)))
        history.user1.append(float(np.mean(epoch_u1)))
        history.user2.append(float(np.mean(epoch_u2)))
    return history


def draw_channel_batch(batch, snrs, cfg: PipelineConfig, noise_rng):
    """Fix this batch's randomness: per item and user, (gain, noise vector)."""
    draws = []
    for z in batch:
        per_user = []
        for snr_db in snrs:
            real = ch.realize_channel(cfg.channel_mode, snr_db, cfg.sr, noise_rng)
            noise = noise_rng.normal(0.0, math.sqrt(real.sigma2), size=z.shape[0])
            per_user.append((real.gain, noise))
        draws.append(per_user)
    return draws


def channel_loss_and_grads(batch, draws, combiner: str, ch_enc: Model, ch_dec: Model,
                           want_grads: bool = True):
    """Combined loss (and parameter gradients) under fixed channel draws.

    Pure in the draws: re-evaluating with the same (batch, draws) after a
    parameter perturbation gives the exact loss surface, which is what the
    finite-difference checks probe.
    """
    per_user = [0.0, 0.0]
    records = []
    for z, user_draws in zip(batch, draws):
        y, tape_e = ch_enc.forward_train(z)
        item = {"z": z, "tape_e": tape_e, "users": []}
        for u, (gain, noise) in enumerate(user_draws):
            received = math.sqrt(gain) * y + noise
            z_hat, tape_d = ch_dec.forward_train(received)
            per_user[u] += mse(z_hat, z)
            item["users"].append((gain, z_hat, tape_d))
        records.append(item)
    scale = 1.0 / len(batch)
    report = combined_loss([v * scale for v in per_user], combiner)
    if not want_grads:
        return report, None, None

    grads_enc = None
    grads_dec = None
    for item in records:
        g_y = np.zeros_like(item["z"])
        for u, (gain, z_hat, tape_d) in enumerate(item["users"]):
            g_zhat = report.grads[u] * scale * mse_grad(z_hat, item["z"])
            g_dec, g_received = ch_dec.backward(tape_d, g_zhat)
            grads_dec = g_dec if grads_dec is None else _acc(grads_dec, g_dec)
            g_y += math.sqrt(gain) * g_received
        g_enc, _ = ch_enc.backward(item["tape_e"], g_y)
        grads_enc = g_enc if grads_enc is None else _acc(grads_enc, g_enc)
    return report, grads_enc, grads_dec


def _channel_batch_step(batch, snrs, cfg, ch_enc, ch_dec, opt_enc, opt_dec,
                        noise_rng) -> LossReport:
    """One training step: draw the channels, combine losses, update."""
    draws = draw_channel_batch(batch, snrs, cfg, noise_rng)
    report, grads_enc, grads_dec = channel_loss_and_grads(
        batch, draws, cfg.combiner, ch_enc, ch_dec)
    opt_enc.step(grads_enc)
    opt_dec.step(grads_dec)
    return report


def _acc(total, grads):
    for layer_total, layer_new in zip(total, grads):
        for name in layer_total:
            layer_total[name] += layer_new[name]
    return total


def build_training_vectors(pairs, cfg: PipelineConfig, models: Models,
                           calibrated_perm: np.ndarray | None,
                           ratios=(0.3, 0.6, 1.0)) -> list[np.ndarray]:
    """Transmit-side payloads over a spread of bandwidth ratios.

    The spread keeps the codec in distribution for every payload length and
    sparsity later swept at evaluation.
    """
    out = []
    for s1, s2 in pairs:
        for r in ratios:
            frame = transmit(s1, s2, replace(cfg, ratio=r), models, calibrated_perm)
            out.append(frame.mixed.payload)
    return out


# ---------------------------------------------------------------------------
# Evaluation sweeps
# ---------------------------------------------------------------------------

CSV_HEADER = "snr_db,ratio,seed,user,sorting,normalization,mse,psnr_db,ssim"


@dataclass(frozen=True)
class SweepRecord:
    snr_db: float
    ratio: float
    seed: int
    user: int
    sorting: str
    normalization: str
    mse: float
    psnr_db: float
    ssim: float

    def csv_row(self) -> str:
        return (f"{self.snr_db:g},{self.ratio:g},{self.seed},{self.user},"
                f"{self.sorting},{self.normalization},{self.mse:.8e},"
                f"{format_psnr(self.psnr_db)},{format_ssim(self.ssim)}")


def evaluate_sweep(pairs, cfg: PipelineConfig, models: Models,
                   calibrated_perm: np.ndarray | None,
                   snr_grid, ratio_grid, n_seeds: int, base_seed: int,
                   sortings=("sensitivity",), normalizations=("on",),
                   noiseless: bool = False) -> list[SweepRecord]:
    """Full factorial sweep; one record per (grid point, seed, user).

    Per-point randomness derives from (base_seed, grid indices), so the
    record list is reproducible and independent of evaluation order.
    """
    records: list[SweepRecord] = []
    d = cfg.semantic.dim
    for i_snr, snr_db in enumerate(snr_grid):
        for i_ratio, ratio in enumerate(ratio_grid):
            for sorting in sortings:
                if sorting not in SORTINGS:
                    raise ValueError(f"unknown sorting mode {sorting!r}")
                for norm in normalizations:
                    point_cfg = replace(cfg, ratio=ratio, normalize=(norm == "on"))
                    for seed_idx in range(n_seeds):
                        records.extend(_sweep_cell(
                            pairs, point_cfg, models, calibrated_perm, d,
                            snr_db, ratio, sorting, norm, seed_idx,
                            base_seed, (i_snr, i_ratio), noiseless))
    return records


def _sweep_cell(pairs, cfg, models, calibrated_perm, d, snr_db, ratio,
                sorting, norm, seed_idx, base_seed, grid_idx, noiseless):
    i_snr, i_ratio = grid_idx
    path = ("sweep", i_snr, i_ratio, sorting, norm, seed_idx)
    perm_override = None
    if sorting == "random":
        perm_override = stream(base_seed, *path, "perm").permutation(d)

    sq_sums = {1: 0.0, 2: 0.0}
    ssim_sums = {1: 0.0, 2: 0.0}
    n_px = 0
    for i_pair, (s1, s2) in enumerate(pairs):
        frame = transmit(s1, s2, cfg, models, calibrated_perm, perm_override)
        for user, target in ((1, s1), (2, s2)):
            chan_rng = stream(base_seed, *path, i_pair, user)
            if noiseless:
                received, gain = frame.coded, 1.0
            else:
                real = ch.realize_channel(cfg.channel_mode, snr_db, cfg.sr, chan_rng)
                received = ch.apply_channel(frame.coded, real, chan_rng)
                gain = real.gain
            rec = receive(received, frame, user, cfg, models, gain=gain)
            sq_sums[user] += pixel_mse(target, rec) * target.flat().size
            ssim_sums[user] += ssim(target, rec)
            n_px += 0 if user == 2 else target.flat().size

    out = []
    for user in (1, 2):
        pooled_mse = sq_sums[user] / n_px
        out.append(SweepRecord(
            snr_db=float(snr_db), ratio=float(ratio), seed=seed_idx, user=user,
            sorting=sorting, normalization=norm,
            mse=pooled_mse / DEFAULT_METRICS.max_value ** 2,
            psnr_db=psnr_from_mse(pooled_mse),
            ssim=ssim_sums[user] / len(pairs)))
    return out


def records_to_csv(records) -> str:
    return "\n".join([CSV_HEADER] + [r.csv_row() for r in records]) + "\n"
