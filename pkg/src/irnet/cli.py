"""Command-line entry point.

Subcommands: prepare, train, infer, eval, audit, analyze.
Exit codes: 0 ok, 1 usage, 2 config/validation, 3 numeric failure,
4 I/O format, 5 partial evaluation failure.

A flat key=value config file may preload any flag of a subcommand via
--config; explicit flags override the file, unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data, metrics, model as model_mod, train as train_mod
from .errors import (CheckpointError, ConfigError, IRNetError, ImageFormatError,
                     ManifestError, NumericsError, ShapeError)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO_FORMAT = 4
EXIT_PARTIAL_EVAL = 5


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _str2bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {v!r}")


def build_parser() -> _Parser:
    parser = _Parser(prog="irnet", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("prepare", help="pair SDR/HDR directories into a "
                                       "manifest and optionally cache patches")
    p.add_argument("--sdr-dir", required=True, help="directory of 8-bit SDR PNGs")
    p.add_argument("--hdr-dir", required=True, help="directory of 16-bit HDR PNGs")
    p.add_argument("--out-manifest", required=True, help="manifest file to write")
    p.add_argument("--patches-out", default=None, help="directory for the patch cache")
    p.add_argument("--mode", choices=["itm", "sritm"], default="itm",
                   help="patch geometry: same-size pairs or x4 low-res SDR")
    p.add_argument("--patch-count", type=int, default=30,
                   help="crops per image (default 30)")
    p.add_argument("--patch-size", type=int, default=256,
                   help="HDR-side crop size in pixels (default 256)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="decode/crop workers; any count gives the same patches")
    p.add_argument("--config", default=None, help="key=value defaults file")

    p = sub.add_parser("train", help="train a model from a manifest or patch cache")
    p.add_argument("--manifest", default=None, help="training pair manifest")
    p.add_argument("--patch-cache", default=None,
                   help="patch cache directory (reused if populated, else "
                        "filled from --manifest)")
    p.add_argument("--mode", choices=["itm", "sritm"], default="itm")
    p.add_argument("--blocks", type=int, default=None,
                   help="number of residual groups (default: 2 itm / 5 sritm)")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--out", required=True, help="output directory for "
                                                "last.ckpt, best.ckpt, history.csv")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr-max", type=float, default=5e-4)
    p.add_argument("--lr-min", type=float, default=1e-11)
    p.add_argument("--restart-period", type=int, default=60)
    p.add_argument("--val-fraction", type=float, default=0.02)
    p.add_argument("--eval-every", type=int, default=1)
    p.add_argument("--patch-count", type=int, default=30)
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--augment", type=_str2bool, default=True)
    p.add_argument("--lr-per-iteration", type=_str2bool, default=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; 1 is the deterministic golden path")
    p.add_argument("--config", default=None)

    p = sub.add_parser("infer", help="run a checkpoint on one 8-bit SDR PNG")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True, help="8-bit RGB PNG")
    p.add_argument("--output", required=True, help="16-bit RGB PNG to write")
    p.add_argument("--tile", type=int, default=None,
                   help="tile size for memory-limited inference (16 px overlap)")
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="score a checkpoint over a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="CSV report to write")
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", default=None)

    p = sub.add_parser("audit", help="print exact parameter and compute costs")
    p.add_argument("--mode", choices=["itm", "sritm"], default="itm")
    p.add_argument("--blocks", type=int, default=None)
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("analyze", help="luminance-gap records or a 1-D "
                                       "luma profile ratio")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", default=None, help="CSV to write")
    p.add_argument("--profile", nargs=5, default=None,
                   metavar=("IMG_A", "IMG_B", "ROW", "X0", "X1"),
                   help="two 16-bit PNGs plus a horizontal segment")
    p.add_argument("--sdr-standard", choices=["rec709", "rec2020"], default="rec709")
    p.add_argument("--hdr-standard", choices=["rec709", "rec2020"], default="rec2020")
    p.add_argument("--config", default=None)
    return parser


# ---------------------------------------------------------------------------
# config-file preloading
# ---------------------------------------------------------------------------

def _load_config_file(path) -> dict[str, str]:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                k, v = line.split("=", 1)
                values[k.strip()] = v.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return values


def _apply_config_file(argv, parser: _Parser) -> None:
    """If argv carries --config, install the file's values as subcommand
    defaults so that explicit flags still win."""
    if not argv or argv[0].startswith("-"):
        return
    sub_name = argv[0]
    cfg_path = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif tok.startswith("--config="):
            cfg_path = tok.split("=", 1)[1]
    if cfg_path is None:
        return  # absent, or argparse will report the missing value
    sub_actions = parser._subparsers._group_actions[0]
    subparser = sub_actions.choices.get(sub_name)
    if subparser is None:
        return
    dest_types = {}
    for action in subparser._actions:
        if action.dest not in ("help", "config", "command"):
            dest_types[action.dest.replace("_", "-")] = action
    values = _load_config_file(cfg_path)
    overrides = {}
    for key, raw in values.items():
        action = dest_types.get(key) or dest_types.get(key.replace("_", "-"))
        if action is None:
            raise ConfigError(f"unknown config key {key!r} for subcommand {sub_name!r}")
        cast = action.type or str
        try:
            overrides[action.dest] = cast(raw)
        except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"bad value for config key {key!r}: {exc}") from exc
    subparser.set_defaults(**overrides)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _crop_all(entries, count, size, seed, lr_scale, threads=1):
    """Decode and crop every pair; one rng stream per image, so the result is
    identical for any worker count."""
    def one(idx_entry):
        idx, entry = idx_entry
        pair = data.load_image_pair(entry)
        rng = np.random.default_rng([seed, idx])
        return data.crop_patches(pair, count, size, rng, lr_scale=lr_scale)

    jobs = list(enumerate(entries))
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(one, jobs))
    else:
        per_image = [one(j) for j in jobs]
    return [p for patches in per_image for p in patches]


def cmd_prepare(args) -> int:
    entries, unpaired = data.pair_directories(args.sdr_dir, args.hdr_dir)
    if unpaired:
        for stem in unpaired:
            print(f"unpaired stem: {stem}", file=sys.stderr)
        return EXIT_CONFIG
    if not entries:
        print("no .png pairs found", file=sys.stderr)
        return EXIT_CONFIG
    manifest = data.DatasetManifest(entries=entries)
    data.validate_manifest(manifest)
    data.write_manifest(entries, args.out_manifest)
    print(f"wrote manifest with {len(entries)} pairs to {args.out_manifest}")
    if args.patches_out:
        lr_scale = 4 if args.mode == "sritm" else 1
        patches = _crop_all(entries, args.patch_count, args.patch_size,
                            args.seed, lr_scale, args.threads)
        data.save_patches(patches, args.patches_out)
        print(f"cached {len(patches)} patches under {args.patches_out}")
    return EXIT_OK


def _model_config_from_args(args) -> model_mod.ModelConfig:
    base = model_mod.ModelConfig.default(args.mode)
    blocks = args.blocks if args.blocks is not None else base.n_blocks
    return model_mod.ModelConfig(mode=args.mode, n_blocks=blocks,
                                 channels=args.channels).validate()


def cmd_train(args) -> int:
    mcfg = _model_config_from_args(args)
    tcfg = train_mod.TrainConfig(
        lr_max=args.lr_max, lr_min=args.lr_min, batch_size=args.batch_size,
        epochs=args.epochs, restart_period_epochs=args.restart_period,
        seed=args.seed, eval_every=args.eval_every,
        val_fraction=args.val_fraction, lr_per_iteration=args.lr_per_iteration,
        augment=args.augment,
    ).validate()

    patches = None
    if args.patch_cache:
        try:
            patches = data.load_patches(args.patch_cache)
        except ManifestError:
            patches = None
    if patches is None:
        if not args.manifest:
            raise ConfigError("train needs --manifest or a populated --patch-cache")
        manifest = data.load_manifest(args.manifest)
        lr_scale = 4 if args.mode == "sritm" else 1
        patches = _crop_all(manifest.entries, args.patch_count, args.patch_size,
                            args.seed, lr_scale, args.threads)
        if args.patch_cache:
            data.save_patches(patches, args.patch_cache)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    net = model_mod.build(mcfg, seed=args.seed)
    result = train_mod.fit(net, patches, tcfg)
    model_mod.save_checkpoint(net, mcfg, out_dir / "last.ckpt")
    best = result.best_params
    model_mod.save_named_arrays(((p.name, best[p.name]) for p in net.parameters()),
                                mcfg, out_dir / "best.ckpt")
    train_mod.write_history_csv(result.history, out_dir / "history.csv")
    if result.history:
        last = result.history[-1]
        print(f"trained {tcfg.epochs} epochs; final mean L1 {last.mean_loss:.6g}")
    else:
        print("epochs=0: wrote the initialized model")
    return EXIT_OK


def _predictor(net, tile):
    def predict(x):
        if tile:
            return model_mod.predict_tiled(net, x, tile)
        return net.predict(x)
    return predict


def cmd_infer(args) -> int:
    net, _cfg = model_mod.load_checkpoint(args.ckpt)
    x = data.load_png8(args.input)
    pred = _predictor(net, args.tile)(x)
    data.save_png16(pred, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, cfg = model_mod.load_checkpoint(args.ckpt)
    manifest = data.load_manifest(args.manifest)
    base = _predictor(net, args.tile)
    if cfg.mode == model_mod.MODE_SRITM:
        predict = lambda sdr: base(data.make_lr(sdr, 4))  # noqa: E731
    else:
        predict = base
    report, failures = metrics.evaluate_pairs(predict, manifest,
                                              threads=args.threads)
    metrics.write_eval_csv(report, args.report)
    if report.sentinel_rows:
        print(f"warning: {report.sentinel_rows} row(s) with zero error excluded "
              f"from the PSNR mean", file=sys.stderr)
    print(f"evaluated {len(report.rows)} pairs: mean PSNR "
          f"{report.mean_psnr:.6g} dB, mean SSIM {report.mean_ssim:.6g}")
    if failures:
        for name, msg in failures:
            print(f"failed: {name}: {msg}", file=sys.stderr)
        return EXIT_PARTIAL_EVAL
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = _model_config_from_args(args)
    n_params = model_mod.count_params(cfg)
    print(f"params: {n_params} ({n_params / 1000.0:.2f}K)")
    if (args.height is None) != (args.width is None):
        raise ConfigError("audit needs both --height and --width (or neither)")
    if args.height is not None:
        macs, flops = model_mod.count_macs(cfg, args.height, args.width)
        print(f"macs: {macs} ({macs / 1e9:.2f}G)")
        print(f"flops: {flops} ({flops / 1e9:.2f}G)")
    return EXIT_OK


def cmd_analyze(args) -> int:
    if (args.profile is None) == (args.manifest is None):
        raise ConfigError("analyze needs exactly one of --manifest or --profile")
    if args.profile is not None:
        img_a_path, img_b_path, row, x0, x1 = args.profile
        try:
            row, x0, x1 = int(row), int(x0), int(x1)
        except ValueError as exc:
            raise ConfigError(f"profile coordinates must be integers: {exc}") from exc
        img_a = data.load_png16(img_a_path)
        img_b = data.load_png16(img_b_path)
        a, b, ratio = metrics.profile_ratio(img_a, img_b, row, x0, x1,
                                            standard=args.hdr_standard)
        if not args.out:
            raise ConfigError("analyze --profile needs --out")
        metrics.write_profile_csv(a, b, ratio, args.out)
        print(f"wrote profile of {len(a)} samples to {args.out}")
        return EXIT_OK
    manifest = data.load_manifest(args.manifest)
    recs = metrics.analyze_luminance(manifest, sdr_standard=args.sdr_standard,
                                     hdr_standard=args.hdr_standard)
    if not args.out:
        raise ConfigError("analyze --manifest needs --out")
    metrics.write_luminance_csv(recs, args.out)
    print(f"wrote {len(recs)} luminance records to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "audit": cmd_audit,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(argv, parser)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse --help (0) or usage error (1)
            return int(exc.code or 0)
        return _COMMANDS[args.command](args)
    except (ConfigError, ManifestError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ImageFormatError, CheckpointError) as exc:
        print(f"i/o format error: {exc}", file=sys.stderr)
        return EXIT_IO_FORMAT
    except IRNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
