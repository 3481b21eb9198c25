"""Command-line interface: ``ffalab {synth,train,dehaze,eval}``.

Exit status is 0 on success, 2 on usage or validation errors and 3 when a
run aborts at runtime (e.g. a non-finite loss).
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import re
import sys
from pathlib import Path

from . import haze
from .metrics import MetricReport
from .model import ModelConfig, export_attention_maps
from .ppm import PNMError, read_ppm, write_ppm
from .tensor import ShapeError
from .trainer import (
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    dehaze,
    load_checkpoint,
    loss_log_path,
    train,
)


EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("ffalab")


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)[xX](\d+)", text)
    if not m or int(m.group(1)) < 1 or int(m.group(2)) < 1:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _thread_limit():
    n = int(os.environ.get("FFA_THREADS", "0") or 0)
    if n <= 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    try:
        ranges = haze.HazeRanges(args.a_min, args.a_max, args.beta_min, args.beta_max)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.depth_scale <= 0:
        raise UsageError("--depth-scale must be positive")
    names = haze.write_dataset(args.out, args.count, args.size, args.seed, ranges, args.depth,
                               args.depth_scale, args.source)
    print(f"wrote {len(names)} samples to {args.out}")
    return EXIT_OK


def _model_config(args) -> ModelConfig:
    return ModelConfig(groups=args.groups, blocks_per_group=args.blocks, channels=args.channels,
                       reduction_ratio=args.reduction, pa_kernel=args.pa_kernel,
                       use_fa=not args.no_fa, use_lrl=not args.no_lrl, use_ffa=not args.no_ffa)


def cmd_train(args) -> int:
    try:
        mc = _model_config(args)
        tc = TrainConfig(steps=args.steps, lr=args.lr, batch=args.batch, patch=args.patch,
                         beta1=args.beta1, beta2=args.beta2, eps=args.eps, seed=args.seed,
                         augment=not args.no_augment, checkpoint_every=args.checkpoint_every)
    except ValueError as e:
        raise UsageError(str(e)) from e
    if not (Path(args.data) / "clean").is_dir():
        raise UsageError(f"{args.data} is not a dataset directory")

    def progress(step, value):
        if args.log_every and step % args.log_every == 0:
            log.info("step %d  l1 %.5f", step, value)

    _, losses = train(mc, tc, args.data, args.out, resume=args.resume, progress=progress)
    final = losses[-1] if losses else float("nan")
    print(f"final l1 {final:.6f}  checkpoint {args.out}  log {loss_log_path(args.out)}")
    return EXIT_OK


def cmd_dehaze(args) -> int:
    ck = load_checkpoint(args.ckpt)
    img = read_ppm(args.input)
    out, maps = dehaze(ck.params, ck.model_config, img)
    write_ppm(out, args.output)
    if args.attn:
        files = export_attention_maps(maps, args.attn)
        print(f"attention maps: {len(files)} files in {args.attn}")
    print(f"wrote {args.output}")
    return EXIT_OK


def _pair_files(hazy_dir: Path, gt_dir: Path) -> list[str]:
    hazy = {p.name for p in hazy_dir.glob("*.ppm")}
    gt = {p.name for p in gt_dir.glob("*.ppm")}
    orphans = sorted(hazy ^ gt)
    if orphans:
        raise UsageError("unpaired files: " + ", ".join(orphans))
    if not hazy:
        raise UsageError(f"no .ppm files in {hazy_dir}")
    return sorted(hazy)


def cmd_eval(args) -> int:
    hazy_dir, gt_dir = Path(args.hazy), Path(args.gt)
    names = _pair_files(hazy_dir, gt_dir)
    ck = load_checkpoint(args.ckpt) if args.ckpt else None
    report, baseline = MetricReport(), MetricReport()
    for name in names:
        h = read_ppm(hazy_dir / name)
        g = read_ppm(gt_dir / name)
        out = dehaze(ck.params, ck.model_config, h)[0] if ck else h
        stem = Path(name).stem
        report.add(stem, out, g)
        baseline.add(stem, h, g)
    report_path = Path(args.report)
    report.write_csv(report_path)
    base_path = report_path.with_name(f"{report_path.stem}.baseline.csv")
    baseline.write_csv(base_path)
    print(report.to_text())
    print(f"\nhazy-input baseline: psnr {baseline.mean_psnr:.4f} dB  ssim {baseline.mean_ssim:.5f}")
    print(f"improvement:         psnr {report.mean_psnr - baseline.mean_psnr:+.4f} dB  "
          f"ssim {report.mean_ssim - baseline.mean_ssim:+.5f}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="ffalab", description="Feature fusion attention dehazing lab.",
                                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic hazy dataset", formatter_class=fmt)
    s.add_argument("--out", required=True, help="output dataset directory")
    s.add_argument("--count", type=int, default=100, help="number of image pairs")
    s.add_argument("--size", type=_size, default=(64, 64), help="image size HxW")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--a-min", type=float, default=0.8, help="minimum atmospheric light")
    s.add_argument("--a-max", type=float, default=1.0, help="maximum atmospheric light")
    s.add_argument("--beta-min", type=float, default=0.04, help="minimum scattering coefficient")
    s.add_argument("--beta-max", type=float, default=0.2, help="maximum scattering coefficient")
    s.add_argument("--depth", choices=["linear", "radial", "mixed"], default="mixed",
                   help="depth map family; mixed alternates per sample")
    s.add_argument("--depth-scale", type=float, default=haze.DEFAULT_DEPTH_SCALE,
                   help="depth at the farthest pixel")
    s.add_argument("--source", default=None, help="directory of clean .ppm images to crop from "
                   "(default: procedural textures)")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train on a dataset directory", formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset directory (from synth)")
    t.add_argument("--out", required=True, help="final checkpoint path")
    t.add_argument("--steps", type=int, default=1000, help="total steps (paper: 500000)")
    t.add_argument("--groups", type=int, default=3, help="number of groups G (paper: 3)")
    t.add_argument("--blocks", type=int, default=19, help="basic blocks per group B (paper: 19)")
    t.add_argument("--channels", type=int, default=64, help="feature channels C (paper: 64)")
    t.add_argument("--reduction", type=int, default=8, help="attention bottleneck divisor")
    t.add_argument("--pa-kernel", type=int, default=3, help="pixel attention kernel size")
    t.add_argument("--patch", type=int, default=48, help="training patch size (paper: 240)")
    t.add_argument("--batch", type=int, default=2, help="patches per step (paper: 2)")
    t.add_argument("--lr", type=float, default=1e-4, help="initial learning rate (paper: 1e-4)")
    t.add_argument("--beta1", type=float, default=0.9, help="Adam beta1 (paper: 0.9)")
    t.add_argument("--beta2", type=float, default=0.999, help="Adam beta2 (paper: 0.999)")
    t.add_argument("--eps", type=float, default=1e-8, help="Adam epsilon")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-fa", action="store_true", help="disable feature attention in blocks")
    t.add_argument("--no-lrl", action="store_true", help="disable local residual learning")
    t.add_argument("--no-ffa", action="store_true", help="disable fusion attention")
    t.add_argument("--no-augment", action="store_true", help="disable rotation/flip augmentation")
    t.add_argument("--checkpoint-every", type=int, default=0, help="intermediate checkpoint period (0: off)")
    t.add_argument("--log-every", type=int, default=100, help="progress log period with -v")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("dehaze", help="dehaze one PPM image", formatter_class=fmt)
    d.add_argument("--ckpt", required=True, help="checkpoint path")
    d.add_argument("--in", dest="input", required=True, help="input hazy .ppm")
    d.add_argument("--out", dest="output", required=True, help="output .ppm")
    d.add_argument("--attn", default=None, help="directory for attention map export")
    d.set_defaults(func=cmd_dehaze)

    e = sub.add_parser("eval", help="score dehazed outputs with PSNR/SSIM", formatter_class=fmt)
    e.add_argument("--ckpt", default=None, help="checkpoint (omit to score the hazy inputs directly)")
    e.add_argument("--hazy", required=True, help="directory of hazy .ppm inputs")
    e.add_argument("--gt", required=True, help="directory of ground-truth .ppm images")
    e.add_argument("--report", required=True, help="output CSV path")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except TrainingDiverged as e:
        print(f"ffalab: aborted: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, CheckpointError, PNMError, ShapeError, ValueError, FileNotFoundError) as e:
        print(f"ffalab {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # noqa: BLE001
        print(f"ffalab {args.command}: runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
