"""Command-line entry point: synth, train, infer, eval, gradcheck, bench-dcn."""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import training as T
from .autodiff import NonFiniteError, Tensor, no_grad
from .config import Config
from .dcn import backend as dcn_backend
from .haze import HazeRange
from .io import (
    CheckpointError,
    ConfigError,
    ImageFormatError,
    load_checkpoint,
    load_config,
    load_dataset,
    load_image,
    make_dataset,
    save_checkpoint,
    save_config,
    save_image,
)
from .metrics import psnr, ssim

log = logging.getLogger("nhdehaze")

CONFIG_NAME = "config.txt"
METRICS_NAME = "metrics.log"


class CliError(Exception):
    pass


def _pair(text: str):
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi', got {text!r}")
    if lo > hi:
        raise argparse.ArgumentTypeError(f"lower bound exceeds upper in {text!r}")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value config file")
    common.add_argument("--preset", choices=("default", "smoke"), default=None, help="base configuration")
    common.add_argument("--seed", type=int, help="overrides model and train seeds")
    common.add_argument("--threads", type=int, default=None, help="operator/BLAS thread count")
    common.add_argument("--deterministic", action="store_true", help="single thread, fixed reduction order")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nhdehaze", description="Non-homogeneous dehazing toolkit")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic hazy/clean dataset")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--count", type=int, default=4)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--clean-dir", type=Path, help="use these PNG/PPM images as clean scenes")
    s.add_argument("--amplitude", type=_pair, default=HazeRange.amplitude)
    s.add_argument("--smoothness", type=_pair, default=HazeRange.smoothness)
    s.add_argument("--light", type=_pair, default=HazeRange.light)

    t = sub.add_parser("train", parents=[common], help="run training stage I or II")
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--out", type=Path, required=True)
    t.add_argument("--init", type=Path, help="stage-I checkpoint (required for stage 2)")
    t.add_argument("--resume", type=Path, help="continue a stage-I run from its last.ckpt")
    t.add_argument("--epochs", type=int, help="override the stage-I epoch budget")
    t.add_argument("--ablation", choices=T.ABLATION_ROWS, help="train an ablation variant instead (stage 1)")

    i = sub.add_parser("infer", parents=[common], help="dehaze one image")
    i.add_argument("--checkpoint", type=Path, required=True)
    i.add_argument("--input", type=Path, required=True)
    i.add_argument("--output", type=Path, required=True)
    i.add_argument("--compare", type=Path, metavar="CLEAN", help="also write hazy|dehazed|clean triptych")

    e = sub.add_parser("eval", parents=[common], help="PSNR/SSIM on a dataset, plus ablation rows")
    e.add_argument("--checkpoint", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--ablation", type=Path, nargs="*", default=[], help="checkpoints of trained ablation variants")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")

    b = sub.add_parser("bench-dcn", parents=[common], help="v3 vs v4 operator timing")
    b.add_argument("--shape", action="append", help="NxCxHxW (repeatable)")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--warmup", type=int, default=3)
    b.add_argument("--backend", action="append", choices=dcn_backend.available_backends())
    return p


# --- helpers ------------------------------------------------------------------


def resolve_config(args, fallback_dir: Optional[Path] = None) -> Config:
    if args.config is not None:
        cfg = load_config(args.config)
    elif fallback_dir is not None and (fallback_dir / CONFIG_NAME).exists():
        cfg = load_config(fallback_dir / CONFIG_NAME)
    elif args.preset == "smoke":
        cfg = T.smoke_config()
    else:
        cfg = Config()
    if args.seed is not None:
        cfg.model.seed = args.seed
        cfg.train.seed = args.seed
    cfg.model.validate()
    cfg.train.validate()
    return cfg


def read_ckpt(path: Path) -> T.Checkpoint:
    tensors, state = load_checkpoint(path)
    return T.Checkpoint(tensors, state)


def write_ckpt(path: Path, ckpt: T.Checkpoint) -> None:
    save_checkpoint(path, ckpt.tensors, ckpt.state)


def format_record(rec: dict) -> str:
    parts = []
    for k, v in rec.items():
        if isinstance(v, float):
            v = f"{v:.6g}"
        parts.append(f"{k}={v}")
    return " ".join(parts)


@contextlib.contextmanager
def thread_limits(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        yield
        return
    from threadpoolctl import threadpool_limits

    prev = dcn_backend.get_num_threads()
    dcn_backend.set_num_threads(n)
    try:
        with threadpool_limits(limits=n):
            yield
    finally:
        dcn_backend.set_num_threads(prev)


def pad_to_multiple(img: np.ndarray, multiple: int):
    """Reflect-pad ``[1, 3, H, W]`` at the bottom/right to a multiple of ``multiple``."""
    h, w = img.shape[-2:]
    ph, pw = (-h) % multiple, (-w) % multiple
    # reflection needs the pad to be shorter than the image side
    mode = "reflect" if ph < h and pw < w else "edge"
    padded = np.pad(img, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
    return padded, (h, w)


# --- commands -----------------------------------------------------------------


def cmd_synth(args) -> int:
    seed = 0 if args.seed is None else args.seed
    clean = None
    if args.clean_dir is not None:
        files = sorted(p for p in args.clean_dir.iterdir() if p.suffix.lower() in (".png", ".ppm"))
        if not files:
            raise CliError(f"{args.clean_dir}: no .png/.ppm images")
        clean = [load_image(f)[0] for f in files]
    ranges = HazeRange(args.amplitude, args.smoothness, args.light)
    records = make_dataset(clean, args.count, ranges, args.out, seed=seed, size=args.size)
    for rec in records:
        print(format_record({k: rec[k] for k in ("index", "hazy", "clean", "amplitude", "depth")}))
    return 0


def _logger(out: Path, append: bool):
    fh = open(out / METRICS_NAME, "a" if append else "w")

    def on_epoch(rec: dict) -> None:
        line = format_record(rec)
        fh.write(line + "\n")
        fh.flush()
        print(line, flush=True)

    return fh, on_epoch


def cmd_train(args) -> int:
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = resolve_config(args, args.resume.parent if args.resume else None)
    if args.epochs is not None:
        cfg.train.epochs_stage1 = args.epochs
    data = load_dataset(args.data)
    refine_only = False
    if args.ablation:
        if args.stage != 1:
            raise CliError("--ablation variants are trained with --stage 1")
        cfg, refine_only = T.ablation_configs(cfg)[args.ablation]
    save_config(cfg, args.out / CONFIG_NAME)

    if args.stage == 2:
        if args.init is None:
            raise CliError("stage 2 needs --init <stage-1 checkpoint>")
        fh, on_epoch = _logger(args.out, append=False)
        try:
            ckpt = T.train_stage2(cfg, read_ckpt(args.init), data, on_epoch=on_epoch)
        except T.TrainingDiverged as exc:
            if exc.last_good is not None:
                write_ckpt(args.out / "last_good.ckpt", exc.last_good)
            raise
        finally:
            fh.close()
        write_ckpt(args.out / "final.ckpt", ckpt)
        return 0

    trainer = T.Stage1Trainer(cfg, data, refine_only=refine_only)
    if args.resume is not None:
        trainer.restore(read_ckpt(args.resume))
    fh, on_epoch = _logger(args.out, append=args.resume is not None)
    tag = np.array(float(T.ABLATION_ROWS.index(args.ablation)) if args.ablation else -1.0)

    def tagged(ck: T.Checkpoint) -> T.Checkpoint:
        ck.state["meta.ablation_row"] = tag
        ck.state["meta.refine_only"] = np.array(float(refine_only))
        return ck

    def after_epoch(rec: dict) -> None:
        on_epoch(rec)
        write_ckpt(args.out / "last.ckpt", tagged(trainer.checkpoint()))
        if trainer.improved:
            write_ckpt(args.out / "best.ckpt", tagged(trainer.checkpoint()))

    try:
        trainer.run(on_epoch=after_epoch)
    except T.TrainingDiverged as exc:
        if exc.last_good is not None:
            write_ckpt(args.out / "last_good.ckpt", tagged(exc.last_good))
        raise
    finally:
        fh.close()
    if not (args.out / "best.ckpt").exists():
        write_ckpt(args.out / "best.ckpt", tagged(trainer.checkpoint()))
    return 0


def _load(path: Path, args):
    cfg = resolve_config(args, path.parent)
    ckpt = read_ckpt(path)
    return ckpt, T.load_model(ckpt, cfg.model)


def cmd_infer(args) -> int:
    _, model = _load(args.checkpoint, args)
    hazy = load_image(args.input)
    padded, (h, w) = pad_to_multiple(hazy, model.config.total_stride)
    with no_grad():
        out = model(Tensor(padded)).data[:, :, :h, :w]
    save_image(out, args.output)
    rec = {"input": str(args.input), "output": str(args.output), "height": h, "width": w}
    if args.compare is not None:
        clean = load_image(args.compare)
        if clean.shape != hazy.shape:
            raise CliError(f"clean image {clean.shape[2:]} does not match input {hazy.shape[2:]}")
        rec.update(
            psnr_in=psnr(hazy, clean), psnr_out=psnr(out, clean), ssim_in=ssim(hazy, clean), ssim_out=ssim(out, clean)
        )
        trip = np.concatenate([hazy, out, clean], axis=3)
        trip_path = args.output.with_name(args.output.stem + "_compare" + args.output.suffix)
        save_image(trip, trip_path)
        rec["triptych"] = str(trip_path)
    print(format_record(rec))
    return 0


def cmd_eval(args) -> int:
    data = load_dataset(args.data)
    _, model = _load(args.checkpoint, args)
    res = T.evaluate(model, data)
    print(format_record({"row": "hazy_input", "psnr": res["hazy_psnr"], "ssim": res["hazy_ssim"]}))
    print(format_record({"row": "full", "psnr": res["psnr"], "ssim": res["ssim"]}))
    variants = []
    for path in args.ablation:
        ckpt, vmodel = _load(path, args)
        idx = int(ckpt.meta("ablation_row", -1.0))
        row = T.ABLATION_ROWS[idx] if idx >= 0 else path.parent.name
        variants.append(T.AblationVariant(row, vmodel, bool(ckpt.meta("refine_only", 0.0))))
    for rec in T.ablation_table(variants, data):
        print(format_record(rec))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    t0 = time.perf_counter()
    results = run_suite(on_result=lambda r: print(r.format(), flush=True), seed=args.seed or 0)
    failed = [r.name for r in results if not r.passed]
    print(format_record({"checks": len(results), "failed": len(failed), "seconds": time.perf_counter() - t0}))
    return 1 if failed else 0


def _shape(text: str):
    try:
        dims = tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        dims = ()
    if len(dims) != 4 or min(dims) < 1:
        raise CliError(f"shape must look like 1x16x32x32, got {text!r}")
    return dims


def cmd_bench(args) -> int:
    from .dcn.bench import DEFAULT_SHAPES, dcn_bench

    shapes = [_shape(s) for s in args.shape] if args.shape else list(DEFAULT_SHAPES)
    report = dcn_bench(shapes, repetitions=args.reps, warmup=args.warmup, backends=args.backend, seed=args.seed or 0)
    print(report.format())
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench-dcn": cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        with thread_limits(args):
            return COMMANDS[args.command](args)
    except (CliError, ConfigError, CheckpointError, ImageFormatError, NonFiniteError, ValueError, OSError, KeyError) as exc:
        print(f"nhdehaze {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
