"""Command-line interface.

Subcommands: ``train``, ``encode``, ``decode``, ``eval``, ``selftest``,
``paramcount``.  Errors print one line to stderr and map to stable exit
codes: config problems 2, missing files 3, malformed binary files 4, shape
mismatches 5, anything else from this package 1.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import config_hash, load_config, resolve_data_dir
from .data import load_dataset, load_image, save_array, save_image, synthetic_textures
from .errors import ConfigError, FormatError, MtscsError, ShapeError
from .metrics import evaluate, psnr, ssim


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    if args.steps is not None:
        cfg.steps = args.steps
    if args.data_dir is not None:
        cfg.data_dir = args.data_dir
    if args.eval_dir is not None:
        cfg.eval_dir = args.eval_dir
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()

    if cfg.data_dir:
        _, images = load_dataset(resolve_data_dir(cfg.data_dir))
    elif args.synthetic > 0:
        images = synthetic_textures(
            args.synthetic, size=cfg.crop_size, channels=cfg.channels, seed=cfg.seed
        )
    else:
        raise ConfigError("no training data: set data_dir or pass --synthetic N")
    eval_images = None
    if cfg.eval_dir:
        _, eval_images = load_dataset(resolve_data_dir(cfg.eval_dir))

    from .training import train

    every = max(1, cfg.steps // 20)

    def progress(record):
        if record["step"] % every == 0 or record["step"] == cfg.steps - 1:
            line = (
                f"step {record['step']:6d}  lr {record['lr']:.3e}"
                f"  loss {record['loss']:.6f}"
            )
            if "eval_psnr_db" in record:
                line += f"  eval_psnr {record['eval_psnr_db']:.2f} dB"
            print(line)

    result = train(cfg, images, eval_images=eval_images, out_dir=cfg.out_dir, progress=progress)
    print(f"config {config_hash(cfg)}  params {result.model.param_count()}")
    print(f"final loss {result.losses[-1]:.6f}")
    print(f"wrote {result.checkpoint_path}")
    print(f"wrote {os.path.join(cfg.out_dir, 'train_log.jsonl')}")
    print(f"wrote {os.path.join(cfg.out_dir, 'loss_curve.png')}")
    return 0


def _load_model(path):
    from .serialization import load_checkpoint

    return load_checkpoint(path)


def _cmd_encode(args) -> int:
    from .serialization import save_measurements

    model, cfg = _load_model(args.checkpoint)
    img = load_image(args.image).astype(model.dtype)
    if img.shape[2] != model.in_shape[2]:
        raise ShapeError(
            f"image has {img.shape[2]} channels, model expects {model.in_shape[2]}"
        )
    if img.shape != model.in_shape:
        model = model.with_in_shape(img.shape[:2])
    meas = model.sense(img)
    scales = [(sp.window, sp.out_h, sp.out_w) for sp in model.encoder.scales]
    save_measurements(
        args.out, meas, img.shape, cfg.cr, model.encoder.achieved_cr(), scales
    )
    print(
        f"encoded {img.shape[0]}x{img.shape[1]}x{img.shape[2]} -> "
        f"{meas.shape[0]}x{meas.shape[1]}x{meas.shape[2]}"
        f"  (CR {model.encoder.achieved_cr():.4f})"
    )
    print(f"wrote {args.out}")
    return 0


def _cmd_decode(args) -> int:
    from .serialization import load_measurements

    model, _ = _load_model(args.checkpoint)
    data = load_measurements(args.measurements)
    original = tuple(int(v) for v in data["original_shape"])
    if original[2] != model.in_shape[2]:
        raise ShapeError(
            f"measurements were taken from {original[2]}-channel data, "
            f"model expects {model.in_shape[2]}"
        )
    if original != model.in_shape:
        model = model.with_in_shape(original[:2])
    stored = [tuple(int(v) for v in s) for s in data["scales"]]
    own = [(sp.window, sp.out_h, sp.out_w) for sp in model.encoder.scales]
    if stored != own:
        raise FormatError(
            f"measurement geometry {stored} does not match checkpoint {own}"
        )
    meas = data["measurements"].astype(model.dtype)
    if meas.shape != model.encoder.out_shape:
        raise ShapeError(
            f"measurement shape {meas.shape} != operator output "
            f"{model.encoder.out_shape}"
        )
    recon = model.refine(model.proxy(meas))

    ext = os.path.splitext(args.out)[1].lower()
    if ext == ".npy":
        save_array(args.out, recon)
    elif ext in (".png", ".jpg", ".jpeg", ".bmp"):
        save_image(args.out, recon)
    else:
        raise ConfigError(f"unsupported output extension {ext!r} (use .npy or .png)")
    print(f"wrote {args.out}")
    if args.reference:
        ref = load_image(args.reference).astype(model.dtype)
        if ref.shape != recon.shape:
            raise ShapeError(
                f"reference shape {ref.shape} != reconstruction {recon.shape}"
            )
        print(f"psnr {psnr(ref, recon):.2f} dB  ssim {ssim(ref, recon):.4f}")
    return 0


def _cmd_eval(args) -> int:
    from .report import save_image_grid, save_metric_bars, write_csv

    model, cfg = _load_model(args.checkpoint)
    names, images = load_dataset(resolve_data_dir(args.data_dir))
    report = evaluate(model, images, names, config_digest=config_hash(cfg))

    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, "metrics.csv")
    write_csv(
        csv_path,
        report.rows,
        fieldnames=["image", "psnr_db", "ssim", "proxy_psnr_db", "proxy_ssim"],
    )
    bars_path = os.path.join(args.out_dir, "psnr_bars.png")
    save_metric_bars(bars_path, report)

    tiles, titles = [], []
    for name, img in list(zip(names, images))[:3]:
        img = np.asarray(img, dtype=model.dtype)
        m = model if img.shape == model.in_shape else model.with_in_shape(img.shape[:2])
        _, prox, recon = m.forward(img)
        tiles += [img, prox, recon]
        titles += [name, f"{name} proxy", f"{name} recon"]
    grid_path = os.path.join(args.out_dir, "examples.png")
    save_image_grid(grid_path, tiles, titles, columns=3)

    print(
        f"images {report.count}  mean_psnr {report.mean_psnr:.2f} dB"
        f"  mean_ssim {report.mean_ssim:.4f}  achieved_cr {report.achieved_cr:.4f}"
    )
    for path in (csv_path, bars_path, grid_path):
        print(f"wrote {path}")
    return 0


def _cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(full=args.full)
    failed = 0
    for name, ok, detail in results:
        mark = "ok  " if ok else "FAIL"
        print(f"{mark} {name}: {detail}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def _cmd_paramcount(args) -> int:
    from .training import build_model

    cfg = load_config(args.config)
    model = build_model(cfg)
    for name, count in model.param_summary().items():
        print(f"{name:16s} {count}")
    n = cfg.crop_size * cfg.crop_size * cfg.channels
    print(f"{'input_size':16s} {n}")
    print(f"parameter/input ratio {model.param_count() / n:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtscs",
        description="Multiscale tensor-summation compressive sensing",
    )
    parser.add_argument("--version", action="version", version=f"mtscs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--eval-dir", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--synthetic",
        type=int,
        default=0,
        metavar="N",
        help="train on N generated textures when no data_dir is set",
    )
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("encode", help="compress an image to a measurement file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_encode)

    p = sub.add_parser("decode", help="reconstruct an image from measurements")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", required=True, help=".npy keeps floats, .png quantizes")
    p.add_argument("--reference", default=None, help="print PSNR/SSIM against this image")
    p.set_defaults(fn=_cmd_decode)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an image directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("selftest", help="run built-in health checks")
    p.add_argument("--full", action="store_true", help="include the slower checks")
    p.set_defaults(fn=_cmd_selftest)

    p = sub.add_parser("paramcount", help="report parameter counts for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_paramcount)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _fail(exc)
        return 2
    except FileNotFoundError as exc:
        _fail(exc)
        return 3
    except FormatError as exc:
        _fail(exc)
        return 4
    except ShapeError as exc:
        _fail(exc)
        return 5
    except MtscsError as exc:
        _fail(exc)
        return 1


def _fail(exc: Exception) -> None:
    message = " ".join(str(exc).split())
    print(f"error: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
