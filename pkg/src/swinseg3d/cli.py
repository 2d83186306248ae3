"""``swinseg3d <synth|train|infer|eval|compare>`` command-line entry point."""
from __future__ import annotations

import argparse
import contextlib
import os
import sys
from typing import List, Optional

from .config import RunConfig
from .errors import SwinSegError
from .model import build_model, param_count
from .pipeline import (case_sample, discover_cases, evaluate_cases, infer_mask, load_case, patch_samples,
                       synthesize_cases)
from .train import load_checkpoint, save_checkpoint, split_cases, train
from .volume import load_volume, save_volume

THREADS_ENV = "SWINSEG3D_THREADS"


def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    try:
        n = int(value)
    except ValueError:
        raise SwinSegError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise SwinSegError(f"{THREADS_ENV} must be a positive integer, got {value!r}")
    return threadpool_limits(limits=n)


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_synth(args) -> int:
    cfg = _config(args)
    if args.count < 0:
        raise SwinSegError(f"--count must be >= 0, got {args.count}")
    ids = synthesize_cases(args.out_dir, args.count, lambda i: cfg.synth_spec(cfg.seed * 100_000 + i))
    print(f"wrote {len(ids)} cases to {args.out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    kind = args.model or cfg.model
    ids = discover_cases(args.data_dir)
    if not ids:
        raise SwinSegError(f"no cases found in {args.data_dir}")
    train_ids, val_ids = split_cases(ids, cfg.val_fraction, cfg.seed)
    if args.no_holdout:
        train_ids, val_ids = ids, ids
    patches = {}
    for c in ids:
        sample, _ = case_sample(*load_case(args.data_dir, c), case_id=c, multiple=cfg.patch_depth)
        patches[c] = patch_samples(sample, cfg.patch_depth, cfg.train_stride)
    model = build_model(cfg.network_config(kind))
    print(f"model {kind}: {param_count(model)} trainable parameters")
    tcfg = cfg.train_config()
    model, log, trainer = train(
        model, [p for c in train_ids for p in patches[c]], tcfg, [p for c in val_ids for p in patches[c]],
        verbose=(lambda r: print(f"epoch {r.epoch} loss {r.train_loss:.6g} val_dice {r.val_dice:.4f}"))
        if args.verbose else None,
    )
    save_checkpoint(args.out, model, trainer.state, log, tcfg, infer_stride=cfg.infer_stride,
                    threshold=cfg.threshold, train_cases=train_ids, val_cases=val_ids)
    log_path = args.log or os.path.splitext(args.out)[0] + ".csv"
    _write(log_path, log.to_csv())
    print(f"best epoch {log.best_epoch} val_dice {log.best_dice:.6f} ({log.stop_reason}); "
          f"checkpoint {args.out}; log {log_path}")
    return 0


def _model_from(path):
    ck = load_checkpoint(path)
    return ck, ck.build_model()


def cmd_infer(args) -> int:
    ck, model = _model_from(args.checkpoint)
    stride = args.stride or ck.extras.get("infer_stride", 8)
    threshold = args.threshold if args.threshold is not None else ck.extras.get("threshold", 0.5)
    pet, ct = load_volume(args.pet), load_volume(args.ct)
    mask = infer_mask(model, pet, ct, stride, threshold, ck.config.patch_depth if ck.kind == "swin" else 16)
    save_volume(mask, args.out)
    print(f"wrote {args.out}: {int(mask.data.sum())} lesion voxels of {mask.data.size}")
    return 0


def cmd_eval(args) -> int:
    ck, model = _model_from(args.checkpoint)
    stride = args.stride or ck.extras.get("infer_stride", 8)
    threshold = ck.extras.get("threshold", 0.5)
    focal = ck.train_config.focal if ck.train_config else None
    ids = discover_cases(args.data_dir)
    if args.split != "all":
        key = "train_cases" if args.split == "train" else "val_cases"
        ids = [c for c in ids if c in set(ck.extras.get(key, []))]
    cases = [(c,) + load_case(args.data_dir, c) for c in ids]
    report = evaluate_cases(model, cases, stride, threshold, focal, name=ck.kind)
    _write(args.out, report.to_csv())
    return 0


def cmd_compare(args) -> int:
    from .compare import run_compare, table_csv

    cfg = _config(args)
    rows = run_compare(cfg, args.data_dir, report=print if args.verbose else (lambda s: None))
    _write(args.out, table_csv(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="swinseg3d", description="3D shifted-window PET/CT lesion segmentation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write synthetic PET/CT/mask cases")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--count", type=int, default=8)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train on a directory of cases")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--model", choices=("swin", "unet3d"))
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="training log CSV (default: checkpoint path with .csv)")
    s.add_argument("--no-holdout", action="store_true", help="validate on the training cases")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="segment one PET/CT pair")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pet", required=True)
    s.add_argument("--ct", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--stride", type=int)
    s.add_argument("--threshold", type=float)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="per-case metrics CSV for a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data-dir", required=True)
    s.add_argument("--split", choices=("all", "train", "val"), default="all")
    s.add_argument("--stride", type=int)
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", parents=[common], help="SwinUNet3D vs 3D U-Net table")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (SwinSegError, OSError, ValueError) as e:
        print(f"swinseg3d: error: {type(e).__name__}: {str(e).splitlines()[0] if str(e) else ''}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
