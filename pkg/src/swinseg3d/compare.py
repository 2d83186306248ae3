"""SwinUNet3D vs 3D U-Net under one config, seed and data split."""
from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass
from typing import Callable, List, Optional

from .config import RunConfig
from .model import build_model, param_count
from .pipeline import case_sample, discover_cases, evaluate_cases, infer_logits, load_case, patch_samples
from .train import TrainLog, split_cases, train

MODELS = ("swin", "unet3d")
TABLE_COLUMNS = ("model", "dice", "iou", "focal_loss", "seconds_per_scan", "train_dice", "params")


@dataclass
class CompareRow:
    model: str
    dice: float
    iou: float
    focal_loss: float
    seconds_per_scan: float
    train_dice: float
    params: int
    log: Optional[TrainLog] = None
    timings: Optional[List[float]] = None


def table_csv(rows: List[CompareRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in rows:
        w.writerow([r.model, f"{r.dice:.6f}", f"{r.iou:.6f}", f"{r.focal_loss:.6g}",
                    f"{r.seconds_per_scan:.6f}", f"{r.train_dice:.6f}", r.params])
    return buf.getvalue()


def time_inference(model, cases, stride: int, patch_depth: int, repeats: int) -> List[float]:
    """Mean seconds per scan for each of ``repeats`` passes, after one untimed warm-up pass."""
    for _, pet, ct, _ in cases[:1]:
        infer_logits(model, pet, ct, stride, patch_depth)
    out = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _, pet, ct, _ in cases:
            infer_logits(model, pet, ct, stride, patch_depth)
        out.append((time.perf_counter() - t0) / len(cases))
    return out


def run_compare(cfg: RunConfig, data_dir, report: Callable[[str], None] = lambda s: None) -> List[CompareRow]:
    ids = discover_cases(data_dir)
    if len(ids) < 2:
        raise ValueError(f"compare needs at least 2 cases in {data_dir}, found {len(ids)}")
    train_ids, val_ids = split_cases(ids, cfg.val_fraction, cfg.seed)
    cases = {c: (c,) + load_case(data_dir, c) for c in ids}
    patches = {}
    for c in ids:
        sample, _ = case_sample(*cases[c][1:], case_id=c, multiple=cfg.patch_depth)
        patches[c] = patch_samples(sample, cfg.patch_depth, cfg.train_stride)
    train_data = [p for c in train_ids for p in patches[c]]
    val_data = [p for c in val_ids for p in patches[c]]
    tcfg = cfg.train_config()

    rows = []
    for kind in MODELS:
        model = build_model(cfg.network_config(kind))
        report(f"{kind}: {param_count(model)} parameters, {len(train_data)} training patches")
        model, log, _ = train(model, train_data, tcfg, val_data)
        report(f"{kind}: best epoch {log.best_epoch}, val dice {log.best_dice:.4f}, stop {log.stop_reason}")
        common = dict(stride=cfg.infer_stride, threshold=cfg.threshold, focal=tcfg.focal,
                      patch_depth=cfg.patch_depth, name=kind)
        val_report = evaluate_cases(model, [cases[c] for c in val_ids], **common)
        train_report = evaluate_cases(model, [cases[c] for c in train_ids], **common)
        timings = time_inference(model, [cases[c] for c in val_ids], cfg.infer_stride, cfg.patch_depth,
                                 cfg.timing_repeats)
        rows.append(CompareRow(kind, val_report.dice, val_report.iou, val_report.focal,
                               statistics.median(timings), train_report.dice, param_count(model), log, timings))
    return rows
