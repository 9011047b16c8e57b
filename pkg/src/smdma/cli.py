"""Command-line surface: data generation, training, calibration, sweeps,
channel sampling, and SVG plots, each leaving a reproducible run manifest.

Exit codes: 0 success, 2 usage, 3 config, 4 data, 5 numeric failure.
Errors print a single machine-parsable line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, channel, codecs, config, media, pipeline, ranking, svgplot
from .errors import ConfigError, DataError, NumericError, UsageError
from .nnkit import load_model, save_model
from .rng import stream

SEM_ENC_FILE = "semantic_encoder.bin"
SEM_DEC_FILE = "semantic_decoder.bin"
CH_ENC_FILE = "channel_encoder.bin"
CH_DEC_FILE = "channel_decoder.bin"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_grid(raw: str) -> list[float]:
    """Parse "a:b:step" into the inclusive grid a, a+step, ..., <= b."""
    parts = raw.split(":")
    if len(parts) != 3:
        raise UsageError(f"malformed range {raw!r} (expected a:b:step)")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        bad = next(p for p in parts if not _is_float(p))
        raise UsageError(f"malformed range {raw!r}: bad token {bad!r}") from None
    if step <= 0 or hi < lo:
        raise UsageError(f"malformed range {raw!r}: need step > 0 and b >= a")
    count = int(round((hi - lo) / step))
    grid = [lo + i * step for i in range(count + 1)]
    return [g for g in grid if g <= hi + 1e-9]


def _is_float(tok: str) -> bool:
    try:
        float(tok)
        return True
    except ValueError:
        return False


def _parse_modes(raw: str, allowed: tuple[str, ...], what: str) -> list[str]:
    modes = [tok.strip() for tok in raw.split(",") if tok.strip()]
    if not modes or any(m not in allowed for m in modes):
        raise UsageError(f"{what} must be a comma list from {allowed}, got {raw!r}")
    return modes


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out_dir: Path, command: str, cfg: dict, seeds: dict,
              outputs: list[Path], started: float) -> Path:
    models = {p.name: _sha256(p) for p in outputs if p.suffix == ".bin"}
    doc = {
        "tool": "smdma",
        "version": __version__,
        "command": command,
        "config": {k: _jsonable(v) for k, v in sorted(cfg.items())},
        "seeds": seeds,
        "model_hashes": models,
        "outputs": [p.name for p in outputs],
        "started": started,
        "finished": time.time(),
    }
    path = out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def _load_cfg(args) -> dict:
    file_values = config.load_config(args.config) if args.config else {}
    return config.effective_config(file_values)


def _workspace(out: Path) -> Path:
    return out if out.suffix == "" or out.is_dir() else out.parent


def _resolve(base: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else base / p


def load_pairs(data_dir: Path) -> list[tuple[media.ImageTensor, media.ImageTensor]]:
    index = data_dir / "index.txt"
    if not index.is_file():
        raise DataError(f"no index.txt in {data_dir}")
    pairs = []
    for line in index.read_text(encoding="ascii").splitlines():
        names = line.split()
        if len(names) != 2:
            raise DataError(f"{index}: malformed line {line!r}")
        pairs.append((media.load_pnm(data_dir / names[0]),
                      media.load_pnm(data_dir / names[1])))
    if not pairs:
        raise DataError(f"{index}: empty dataset")
    return pairs


def _write_loss_csv(path: Path, losses: list[float]) -> None:
    rows = [f"{i + 1},{loss:.10e}" for i, loss in enumerate(losses)]
    path.write_text("\n".join(["epoch,loss"] + rows) + "\n", encoding="ascii")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.size < 8:
        raise UsageError(f"--size {args.size} too small (need >= 8)")
    if not 0.0 <= args.edit_fraction <= 1.0:
        raise UsageError(f"--edit-fraction {args.edit_fraction} not in [0, 1]")
    if args.count < 1:
        raise UsageError(f"--count must be >= 1, got {args.count}")
    started = time.time()
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise DataError(f"{out} exists and is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)

    spec = media.PairSpec(size=args.size, edit_fraction=args.edit_fraction,
                          texture_seed=args.seed, shapes=args.shapes)
    index_lines = []
    outputs = []
    for i in range(args.count):
        s1, s2 = media.gen_pair(spec, seed=args.seed + i)
        name_a, name_b = f"pair_{i:04d}_a.pgm", f"pair_{i:04d}_b.pgm"
        media.save_pnm(s1, out / name_a)
        media.save_pnm(s2, out / name_b)
        index_lines.append(f"{name_a} {name_b}")
        outputs += [out / name_a, out / name_b]
    (out / "index.txt").write_text("\n".join(index_lines) + "\n", encoding="ascii")
    outputs.append(out / "index.txt")
    _manifest(out, "gen-data",
              {"data.count": args.count, "data.size": args.size,
               "data.edit_fraction": args.edit_fraction, "data.shapes": args.shapes},
              {"seed": args.seed}, outputs, started)
    print(f"wrote {args.count} pairs to {out}")
    return 0


def _load_semantic(workspace: Path, cfg: dict, size: int):
    enc_path, dec_path = workspace / SEM_ENC_FILE, workspace / SEM_DEC_FILE
    for p in (enc_path, dec_path):
        if not p.is_file():
            raise DataError(f"missing semantic model {p} (run train --stage semantic)")
    return load_model(enc_path), load_model(dec_path)


def cmd_train(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = _resolve(out, cfg["data.dir"])
    pairs = load_pairs(data_dir)
    size = pairs[0][0].height
    pcfg = config.pipeline_config(cfg, image_size=size)

    if args.stage == "semantic":
        images = [img for pair in pairs for img in pair]
        enc, dec, losses = codecs.train_semantic(
            images, pcfg.semantic, epochs=cfg["semantic.epochs"],
            seed=cfg["semantic.seed"], lr=cfg["semantic.lr"],
            batch_size=cfg["semantic.batch_size"])
        codecs.standardize_features(enc, dec, images)
        save_model(enc, out / SEM_ENC_FILE)
        save_model(dec, out / SEM_DEC_FILE)
        codecs.write_codec_meta(out / "semantic_codec.meta", pcfg.semantic)
        _write_loss_csv(out / "semantic_loss.csv", losses)
        outputs = [out / SEM_ENC_FILE, out / SEM_DEC_FILE, out / "semantic_loss.csv"]
        _manifest(out, "train-semantic", cfg, {"seed": cfg["semantic.seed"]},
                  outputs, started)
        final = f"{losses[-1]:.6f}" if losses else "n/a"
        print(f"semantic codec trained for {cfg['semantic.epochs']} epochs "
              f"(final loss {final})")
        return 0

    sem_enc, sem_dec = _load_semantic(out, cfg, size)
    models = pipeline.Models(sem_enc=sem_enc, sem_dec=sem_dec)
    perm = None
    if pcfg.ranking_mode == "calibrated":
        rank_path = _resolve(out, cfg["ranking.file"])
        if not rank_path.is_file():
            raise DataError(f"missing ranking file {rank_path} (run calibrate)")
        perm, _ = ranking.load_ranking(rank_path)
    z_vectors = pipeline.build_training_vectors(pairs, pcfg, models, perm,
                                                ratios=cfg["train.ratios"])
    ccfg = config.channel_codec_config(cfg)
    ch_enc, ch_dec = codecs.build_channel_codec(
        ccfg, stream(cfg["train.seed"], "channel-init"))
    history = pipeline.train_channel(z_vectors, pcfg, ch_enc, ch_dec,
                                     seed=cfg["train.seed"])
    save_model(ch_enc, out / CH_ENC_FILE)
    save_model(ch_dec, out / CH_DEC_FILE)
    codecs.write_codec_meta(out / "channel_codec.meta", ccfg)
    _write_loss_csv(out / "channel_loss.csv", history.combined)
    outputs = [out / CH_ENC_FILE, out / CH_DEC_FILE, out / "channel_loss.csv"]
    _manifest(out, "train-channel", cfg, {"seed": cfg["train.seed"]}, outputs, started)
    final = f"{history.combined[-1]:.6f}" if history.combined else "n/a"
    print(f"channel codec trained for {cfg['train.epochs']} epochs "
          f"(final combined loss {final})")
    return 0


def cmd_calibrate(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    out = Path(args.out)
    workspace = Path(args.models) if args.models else out.parent
    workspace.mkdir(parents=True, exist_ok=True)
    data_dir = _resolve(workspace, cfg["data.dir"])
    pairs = load_pairs(data_dir)
    size = pairs[0][0].height
    sem_enc, sem_dec = _load_semantic(workspace, cfg, size)
    images = [img for pair in pairs for img in pair]
    perm = ranking.calibrate_ranking(images, sem_enc.forward, sem_dec.forward,
                                     cfg["ranking.epsilon"])
    ranking.save_ranking(out, perm, cfg["ranking.epsilon"])
    _manifest(workspace, "calibrate", cfg, {}, [out], started)
    print(f"calibrated ranking over {len(images)} images -> {out}")
    return 0


def cmd_sweep(args) -> int:
    started = time.time()
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    workspace = Path(args.models) if args.models else out
    data_dir = _resolve(workspace, cfg["data.dir"])
    pairs = load_pairs(data_dir)[:cfg["sweep.pairs"]]
    size = pairs[0][0].height
    pcfg = config.pipeline_config(cfg, image_size=size)

    sem_enc, sem_dec = _load_semantic(workspace, cfg, size)
    ch_enc = ch_dec = None
    if not args.identity_channel_codec:
        for p in (workspace / CH_ENC_FILE, workspace / CH_DEC_FILE):
            if not p.is_file():
                raise DataError(f"missing channel model {p} (run train --stage channel)")
        ch_enc = load_model(workspace / CH_ENC_FILE)
        ch_dec = load_model(workspace / CH_DEC_FILE)
    models = pipeline.Models(sem_enc=sem_enc, sem_dec=sem_dec,
                             ch_enc=ch_enc, ch_dec=ch_dec)
    perm = None
    if pcfg.ranking_mode == "calibrated":
        perm, _ = ranking.load_ranking(_resolve(workspace, cfg["ranking.file"]))

    snr_grid = parse_grid(args.snr)
    ratio_grid = parse_grid(args.ratio)
    sortings = _parse_modes(args.sorting, pipeline.SORTINGS, "--sorting")
    normalizations = _parse_modes(args.normalization, ("on", "off"), "--normalization")
    if args.seeds < 1:
        raise UsageError(f"--seeds must be >= 1, got {args.seeds}")

    records = pipeline.evaluate_sweep(
        pairs, pcfg, models, perm, snr_grid, ratio_grid, args.seeds,
        base_seed=args.seed, sortings=sortings, normalizations=normalizations,
        noiseless=args.noiseless)
    csv_path = out / "sweep.csv"
    csv_path.write_text(pipeline.records_to_csv(records), encoding="ascii")

    k = max(1, int(np.floor(min(ratio_grid) * pcfg.semantic.dim)))
    _manifest(out, "sweep", cfg,
              {"seed": args.seed, "seeds": args.seeds},
              [csv_path], started)
    print(f"{len(records)} records -> {csv_path}")
    print(f"frame cost at min ratio: {pcfg.basis.q * k} channel uses for 2x{k} "
          f"stream dims (expansion x{pcfg.basis.q / 2:g})")
    return 0


def cmd_plot(args) -> int:
    src = Path(args.infile)
    if not src.is_file():
        raise DataError(f"no such CSV: {src}")
    with src.open(newline="", encoding="ascii") as fh:
        rows = list(csv.DictReader(fh))
    svg = svgplot.render_plot(rows, args.x, args.y, args.group,
                              title=src.name)
    Path(args.out).write_text(svg, encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


def cmd_sample_channel(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    try:
        b0, m, omega = (float(tok) for tok in args.params.split(","))
        params = channel.SrParams(b0=b0, m=m, omega=omega)
    except ValueError as exc:
        raise UsageError(f"bad --params {args.params!r}: {exc}") from None
    samples = channel.sr_sample(args.n, params, args.seed)
    grid, cdf = channel.sr_cdf_grid(params)
    ks = channel.ks_statistic(samples, grid, cdf)
    mean = float(samples.mean())
    buf = io.StringIO()
    buf.write("index,gain\n")
    for i, g in enumerate(samples):
        buf.write(f"{i},{g!r}\n")
    buf.write(f"# mean={mean:.6f} ks={ks:.6f}\n")
    Path(args.out).write_text(buf.getvalue(), encoding="ascii")
    print(f"{args.n} gains -> {args.out} (mean={mean:.4f}, ks={ks:.5f})")
    return 0


# ---------------------------------------------------------------------------
# Parser / entry point
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="smdma", description=__doc__)
    parser.add_argument("--version", action="version", version=f"smdma {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate synthetic PGM image pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--edit-fraction", type=float, default=0.35)
    p.add_argument("--shapes", type=int, default=3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the semantic or channel codec")
    p.add_argument("--stage", choices=("semantic", "channel"), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="compute the static sensitivity ranking")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output ranking file")
    p.add_argument("--models", default=None,
                   help="workspace with semantic models (default: dir of --out)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sweep", help="run an SNR x ratio evaluation grid")
    p.add_argument("--config", default=None)
    p.add_argument("--snr", default="-10:10:5", help='grid "a:b:step" in dB')
    p.add_argument("--ratio", default="1:1:1", help='grid "a:b:step"')
    p.add_argument("--sorting", default="sensitivity",
                   help="comma list from sensitivity,random")
    p.add_argument("--normalization", default="on", help="comma list from on,off")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--out", required=True)
    p.add_argument("--models", default=None,
                   help="workspace with trained models (default: --out)")
    p.add_argument("--noiseless", action="store_true", help="ideal channel")
    p.add_argument("--identity-channel-codec", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render a sweep CSV to SVG")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--x", choices=("snr_db", "ratio"), required=True)
    p.add_argument("--y", choices=("psnr_db", "ssim", "mse"), required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("sample-channel", help="draw Shadowed-Rician power gains")
    p.add_argument("--params", default="0.158,19.4,1.29", help='"b0,m,omega"')
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample_channel)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return 4
    except NumericError as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
