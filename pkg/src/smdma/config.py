"""Flat ``section.key = value`` experiment configuration.

Precedence: command-line flags override file values override the built-in
defaults.  Unknown keys are rejected so typos fail fast; every effective
value is echoed into the run manifest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .channel import SrParams
from .codecs import ChannelCodecConfig, SemanticCodecConfig
from .errors import ConfigError
from .ortho import OrthoBasis
from .pipeline import PipelineConfig


def _parse_bool(raw: str) -> bool:
    if raw in ("on", "true", "1", "yes"):
        return True
    if raw in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {raw!r}")


def _parse_range(raw: str) -> tuple[float, float]:
    parts = raw.split(":")
    if len(parts) != 2:
        raise ValueError(f"expected lo:hi, got {raw!r}")
    return float(parts[0]), float(parts[1])


def _parse_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in raw.split(","))


def _choice(*options: str):
    def conv(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"expected one of {options}, got {raw!r}")
        return raw
    return conv


# key -> (converter, default)
SCHEMA: dict[str, tuple] = {
    "data.dir": (str, "data"),
    "data.count": (int, 16),
    "data.size": (int, 32),
    "data.edit_fraction": (float, 0.35),
    "data.shapes": (int, 3),
    "data.seed": (int, 1),
    "semantic.hidden": (int, 256),
    "semantic.dim": (int, 64),
    "semantic.epochs": (int, 100),
    "semantic.batch_size": (int, 8),
    "semantic.lr": (float, 1e-4),
    "semantic.seed": (int, 2),
    "fusion.tau": (float, 0.05),
    "ranking.mode": (_choice("calibrated", "per_frame"), "calibrated"),
    "ranking.epsilon": (float, 0.01),
    "ranking.file": (str, "ranking.txt"),
    "ortho.u1": (_parse_floats, (0.5, -0.5, 0.5, -0.5)),
    "ortho.u2": (_parse_floats, (0.5, 0.5, -0.5, -0.5)),
    "channel.mode": (_choice("sr_fading", "awgn_only"), "sr_fading"),
    "channel.b0": (float, 0.158),
    "channel.m": (float, 19.4),
    "channel.omega": (float, 1.29),
    "channel.genie_csi": (_parse_bool, False),
    "channel.kernel_size": (int, 3),
    "pipeline.ratio": (float, 1.0),
    "pipeline.combiner": (_choice("geometric", "arithmetic"), "geometric"),
    "train.epochs": (int, 100),
    "train.batch_size": (int, 8),
    "train.lr": (float, 1e-4),
    "train.user1_snr": (_parse_range, (-10.0, 0.0)),
    "train.user2_snr": (_parse_range, (0.0, 10.0)),
    "train.seed": (int, 3),
    "train.ratios": (_parse_floats, (0.3, 0.6, 1.0)),
    "sweep.pairs": (int, 8),
}


def defaults() -> dict:
    return {key: default for key, (_, default) in SCHEMA.items()}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; blank lines and # comments allowed."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.strip()
        if not body or body.startswith("#"):
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, _, raw = body.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        conv = SCHEMA[key][0]
        try:
            values[key] = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def effective_config(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    cfg = defaults()
    cfg.update(file_values or {})
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown override key {key!r}")
        cfg[key] = value
    return cfg


def pipeline_config(cfg: dict, image_size: int | None = None,
                    channels: int = 1) -> PipelineConfig:
    size = image_size if image_size is not None else cfg["data.size"]
    try:
        sem = SemanticCodecConfig(height=size, width=size, channels=channels,
                                  hidden=cfg["semantic.hidden"], dim=cfg["semantic.dim"])
        basis = OrthoBasis(u1=np.array(cfg["ortho.u1"]), u2=np.array(cfg["ortho.u2"]))
        return PipelineConfig(
            semantic=sem,
            tau=cfg["fusion.tau"],
            ranking_mode=cfg["ranking.mode"],
            epsilon=cfg["ranking.epsilon"],
            ratio=cfg["pipeline.ratio"],
            basis=basis,
            channel_mode=cfg["channel.mode"],
            sr=SrParams(b0=cfg["channel.b0"], m=cfg["channel.m"], omega=cfg["channel.omega"]),
            genie_csi=cfg["channel.genie_csi"],
            user1_snr=cfg["train.user1_snr"],
            user2_snr=cfg["train.user2_snr"],
            batch_size=cfg["train.batch_size"],
            epochs=cfg["train.epochs"],
            lr=cfg["train.lr"],
            combiner=cfg["pipeline.combiner"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def channel_codec_config(cfg: dict) -> ChannelCodecConfig:
    return ChannelCodecConfig(kernel_size=cfg["channel.kernel_size"])
