"""Semantic and channel codec construction plus stage-1 semantic training.

The semantic codec is a dense autoencoder: flatten, dense(hidden), ReLU,
dense(d) on the encode side and the mirror image on the decode side, with
an evaluation-time clamp to [0, 1] kept outside the differentiable path.
The channel codec is a fully convolutional 1-D autoencoder whose widths
grow 1 -> 64 -> 128 before a kernel-1 mixdown back to one sequence, so the
transmitted length always equals the input length.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError
from .media import ImageTensor, image_from_flat
from .nnkit import Adam, Conv1d, Dense, Model, Relu, mse, mse_grad
from .rng import stream


@dataclass(frozen=True)
class SemanticCodecConfig:
    height: int = 32
    width: int = 32
    channels: int = 1
    hidden: int = 256
    dim: int = 64

    def __post_init__(self):
        if self.dim < 8 or self.dim % 2 != 0:
            raise ValueError(f"feature dim must be even and >= 8, got {self.dim}")

    @property
    def flat_size(self) -> int:
        return self.height * self.width * self.channels


@dataclass(frozen=True)
class ChannelCodecConfig:
    encoder_channels: tuple[int, int] = (64, 128)
    decoder_channels: tuple[int, int] = (64, 1)
    kernel_size: int = 3

    def __post_init__(self):
        if len(self.encoder_channels) != 2 or self.encoder_channels[0] >= self.encoder_channels[1]:
            raise ValueError("encoder widths must be two increasing counts")
        if self.decoder_channels[-1] != 1:
            raise ValueError("decoder must end in a single channel")


def build_semantic_codec(cfg: SemanticCodecConfig,
                         rng: np.random.Generator | None = None) -> tuple[Model, Model]:
    encoder = Model([
        Dense(cfg.flat_size, cfg.hidden),
        Relu(),
        Dense(cfg.hidden, cfg.dim),
    ])
    decoder = Model([
        Dense(cfg.dim, cfg.hidden),
        Relu(),
        Dense(cfg.hidden, cfg.flat_size),
    ])
    if rng is not None:
        encoder.init_params(rng)
        decoder.init_params(rng)
    return encoder, decoder


def build_channel_codec(cfg: ChannelCodecConfig,
                        rng: np.random.Generator | None = None) -> tuple[Model, Model]:
    w1, w2 = cfg.encoder_channels
    encoder = Model([
        Conv1d(1, w1, cfg.kernel_size),
        Relu(),
        Conv1d(w1, w2, cfg.kernel_size),
        Relu(),
        # Kernel-1 mixdown keeps channel uses equal to the feature length.
        Conv1d(w2, 1, 1),
    ])
    d1, d2 = cfg.decoder_channels
    decoder = Model([
        Conv1d(1, d1, cfg.kernel_size),
        Relu(),
        Conv1d(d1, d2, cfg.kernel_size),
    ])
    if rng is not None:
        encoder.init_params(rng)
        decoder.init_params(rng)
    return encoder, decoder


def encode_image(encoder: Model, image: ImageTensor) -> np.ndarray:
    return encoder.forward(image.flat())


def decode_feature(decoder: Model, f: np.ndarray, cfg: SemanticCodecConfig,
                   clamp: bool = True) -> ImageTensor:
    flat = decoder.forward(f)
    if clamp:
        flat = np.clip(flat, 0.0, 1.0)
    return image_from_flat(flat, cfg.height, cfg.width, cfg.channels)


def train_semantic(images, cfg: SemanticCodecConfig, epochs: int, seed: int,
                   lr: float = 1e-4, batch_size: int = 8
                   ) -> tuple[Model, Model, list[float]]:
    """MSE autoencoder training; returns (encoder, decoder, per-epoch loss).

    Deterministic given (dataset order, seed).  Raises on divergence.
    """
    if len(images) == 0:
        raise ValueError("training dataset is empty")
    encoder, decoder = build_semantic_codec(cfg, stream(seed, "semantic-init"))
    if epochs == 0:
        return encoder, decoder, []
    order_rng = stream(seed, "semantic-order")
    opt_enc = Adam(encoder, lr=lr)
    opt_dec = Adam(decoder, lr=lr)
    flats = [img.flat() for img in images]

    losses: list[float] = []
    for epoch in range(epochs):
        order = order_rng.permutation(len(flats))
        epoch_losses = []
        for lo in range(0, len(order), batch_size):
            batch = order[lo:lo + batch_size]
            grads_enc = None
            grads_dec = None
            batch_loss = 0.0
            for idx in batch:
                x = flats[idx]
                f, tape_e = encoder.forward_train(x)
                rec, tape_d = decoder.forward_train(f)
                batch_loss += mse(rec, x)
                g_dec, g_f = decoder.backward(tape_d, mse_grad(rec, x))
                g_enc, _ = encoder.backward(tape_e, g_f)
                grads_enc = g_enc if grads_enc is None else _accumulate(grads_enc, g_enc)
                grads_dec = g_dec if grads_dec is None else _accumulate(grads_dec, g_dec)
            scale = 1.0 / len(batch)
            opt_enc.step(_scaled(grads_enc, scale))
            opt_dec.step(_scaled(grads_dec, scale))
            epoch_losses.append(batch_loss * scale)
        mean_loss = float(np.mean(epoch_losses))
        if not np.isfinite(mean_loss):
            raise NumericError(f"semantic training diverged at epoch {epoch}")
        losses.append(mean_loss)
    return encoder, decoder, losses


def standardize_features(encoder: Model, decoder: Model, images,
                         floor: float = 1e-6) -> np.ndarray:
    """Rescale the feature space so each dimension is zero mean, unit std.

    Folds the per-dimension affine into the encoder's last and the
    decoder's first dense layer, so the architecture and every composition
    are unchanged; only the latent basis moves.  Unit-scale features make
    the similarity threshold and perturbation amplitude comparable across
    dimensions, and a cropped (zeroed) dimension then decodes at its
    dataset mean instead of an arbitrary raw zero.  Returns the per-dim
    standard deviations that were folded in.
    """
    feats = np.stack([encoder.forward(img.flat()) for img in images])
    mu = feats.mean(axis=0)
    sd = np.maximum(feats.std(axis=0), floor)

    enc_out = encoder.layers[-1]
    dec_in = decoder.layers[0]
    if not isinstance(enc_out, Dense) or not isinstance(dec_in, Dense):
        raise ValueError("feature standardization expects dense codec boundaries")
    enc_out.W = enc_out.W / sd[:, np.newaxis]
    enc_out.b = (enc_out.b - mu) / sd
    dec_in.b = dec_in.b + dec_in.W @ mu
    dec_in.W = dec_in.W * sd[np.newaxis, :]
    return sd


def _accumulate(total, grads):
    for layer_total, layer_new in zip(total, grads):
        for name in layer_total:
            layer_total[name] += layer_new[name]
    return total


def _scaled(grads, scale: float):
    return [{name: g * scale for name, g in layer.items()} for layer in grads]


def write_codec_meta(path, cfg) -> None:
    """Record codec config fields next to a model file, one key per line."""
    lines = [f"{name} = {getattr(cfg, name)}" for name in cfg.__dataclass_fields__]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
