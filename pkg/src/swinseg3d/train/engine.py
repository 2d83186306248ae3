"""Mini-batch Adam training with early stopping on validation Dice."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..errors import ConfigError, ContractError, NonFiniteLossError
from ..losses import FocalConfig, binarize, dice, focal_loss, iou
from ..tensor import AdamState, adam_step, backward, no_grad
from ..volume.preprocess import extract_patches, stitch_patches

LOG_COLUMNS = ("epoch", "train_loss", "val_dice", "val_iou", "val_loss", "seconds")


@dataclass
class Sample:
    """One training or evaluation item: ``image`` ``[2, D, H, W]``, ``mask`` ``[1, D, H, W]``."""

    image: np.ndarray
    mask: np.ndarray
    case_id: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        mask = np.asarray(self.mask)
        if mask.ndim == self.image.ndim - 1:
            mask = mask[None]
        if mask.shape[1:] != self.image.shape[1:]:
            raise ContractError(
                f"sample {self.case_id!r}: mask {mask.shape} does not match image {self.image.shape}"
            )
        self.mask = mask.astype(np.uint8)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 2
    max_epochs: int = 100
    patience: int = 10
    max_steps: Optional[int] = None
    focal: FocalConfig = field(default_factory=FocalConfig)
    val_fraction: float = 0.2
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError(f"max_steps must be >= 1, got {self.max_steps}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: float
    val_iou: float
    val_loss: float
    seconds: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stop_reason: str = ""
    steps: int = 0

    @property
    def best_dice(self) -> float:
        return self.records[self.best_epoch].val_dice if self.best_epoch >= 0 else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_dice), repr(r.val_iou), repr(r.val_loss),
                        repr(r.seconds)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, best_epoch: int = -1, stop_reason: str = "", steps: int = 0) -> "TrainLog":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != LOG_COLUMNS:
            raise ContractError(f"train log header must be {','.join(LOG_COLUMNS)}")
        recs = [EpochRecord(int(r[0]), *map(float, r[1:])) for r in rows[1:]]
        return cls(recs, best_epoch, stop_reason, steps)


@dataclass
class CaseMetrics:
    case_id: str
    dice: float
    iou: float
    focal: float
    seconds: float


@dataclass
class MetricsReport:
    model: str
    rows: List[CaseMetrics]

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.rows]))

    @property
    def dice(self) -> float:
        return self.mean("dice")

    @property
    def iou(self) -> float:
        return self.mean("iou")

    @property
    def focal(self) -> float:
        return self.mean("focal")

    @property
    def seconds(self) -> float:
        return self.mean("seconds")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "case_id", "dice", "iou", "focal_loss", "seconds"])
        for r in self.rows:
            w.writerow([self.model, r.case_id, f"{r.dice:.6f}", f"{r.iou:.6f}", f"{r.focal:.6g}", f"{r.seconds:.6f}"])
        w.writerow([self.model, "mean", f"{self.dice:.6f}", f"{self.iou:.6f}", f"{self.focal:.6g}",
                    f"{self.seconds:.6f}"])
        return buf.getvalue()


def split_cases(case_ids: Sequence[str], fraction: float = 0.2, seed: int = 0):
    """Seed-stable (train, validation) partition; at least one case goes to each side when possible."""
    ids = sorted(case_ids)
    if len(ids) < 2:
        return list(ids), list(ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_val = min(len(ids) - 1, max(1, int(round(fraction * len(ids)))))
    val = sorted(ids[i] for i in order[:n_val])
    train = sorted(ids[i] for i in order[n_val:])
    return train, val


def predict_logits(model, image: np.ndarray, patch_depth: int = 16, stride: Optional[int] = None) -> np.ndarray:
    """Logits ``[out, D, H, W]`` for a depth-padded ``[2, D, H, W]`` volume.

    Volumes deeper than ``patch_depth`` are tiled along depth and overlapping
    predictions are averaged.
    """
    stride = patch_depth if stride is None else stride
    with no_grad():
        if image.shape[1] == patch_depth:
            return model(image).data
        patches = extract_patches(image, patch_depth, stride)
        return stitch_patches([(p.origin, model(p.data).data) for p in patches], image.shape[1])


def batch_loss(model, batch: Sequence[Sample], focal: FocalConfig):
    loss = None
    for s in batch:
        term = focal_loss(model(s.image), s.mask, focal)
        loss = term if loss is None else loss + term
    return loss * (1.0 / len(batch))


class Trainer:
    """Owns the optimizer state; :meth:`step` performs exactly one Adam update."""

    def __init__(self, model, cfg: TrainConfig, state: Optional[AdamState] = None):
        self.model = model
        self.cfg = cfg
        self.params = model.parameters()
        self.state = state if state is not None else AdamState(lr=cfg.lr)

    def step(self, batch: Sequence[Sample], label: str = "") -> float:
        self.model.zero_grad()
        loss = batch_loss(self.model, batch, self.cfg.focal)
        value = float(loss.item())
        if not math.isfinite(value):
            ids = ", ".join(s.case_id or "?" for s in batch)
            raise NonFiniteLossError(f"non-finite loss {value} at step {self.state.step + 1} {label} (samples: {ids})")
        backward(loss, self.params)
        adam_step(self.params, None, self.state)
        return value


def evaluate(model, data: Sequence[Sample], threshold: float = 0.5, focal: FocalConfig = FocalConfig(),
             stride: Optional[int] = None, name: str = "model", patch_depth: int = 16,
             crop: Optional[Sequence[int]] = None) -> MetricsReport:
    """Per-case Dice, IoU, focal loss and inference seconds. Never mutates the model.

    ``crop`` optionally gives each case's original depth; padded slices are
    dropped before scoring.
    """
    if not data:
        raise ContractError("evaluate needs at least one sample")
    rows = []
    for i, s in enumerate(data):
        t0 = time.perf_counter()
        logits = predict_logits(model, s.image, patch_depth, stride)
        seconds = time.perf_counter() - t0
        mask = s.mask
        if crop is not None:
            logits, mask = logits[:, :crop[i]], mask[:, :crop[i]]
        pred = binarize(logits, threshold)
        loss = focal_loss(logits.astype(np.float64), mask, focal).item()
        rows.append(CaseMetrics(s.case_id or str(i), dice(pred, mask), iou(pred, mask), float(loss), seconds))
    return MetricsReport(name, rows)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _improves(rec: EpochRecord, log: TrainLog) -> bool:
    if log.best_epoch < 0:
        return True
    best = log.records[log.best_epoch]
    return rec.val_dice > best.val_dice or (rec.val_dice == best.val_dice and rec.val_loss < best.val_loss)


def train(model, data: Sequence[Sample], cfg: TrainConfig, val_data: Optional[Sequence[Sample]] = None,
          trainer: Optional[Trainer] = None, log: Optional[TrainLog] = None, verbose=None,
          restore_best: bool = True):
    """Train until ``max_epochs``, ``max_steps`` or early stopping; returns ``(model, log, trainer)``.

    Validation Dice (mean over ``val_data``, or over ``data`` when no
    validation set is given) is computed after every epoch; the returned model
    holds the weights of the best epoch unless ``restore_best`` is False. An
    epoch improves on the best when its Dice is higher, or equal with a lower
    validation focal loss, so a run whose Dice is still flat at zero is not
    stopped while the loss keeps falling.

    Passing the ``trainer`` and ``log`` of an earlier run resumes it at the
    next epoch. The weights loaded at that point stand in for the earlier best
    epoch, so resume from a checkpoint of the best model (the default output)
    or from one saved with ``restore_best=False`` at the last epoch.
    """
    if not data:
        raise ContractError("training data is empty")
    val = list(val_data) if val_data else list(data)
    trainer = trainer or Trainer(model, cfg)
    log = log or TrainLog()
    best_state = model.state_dict() if log.best_epoch >= 0 else None
    since_best = len(log.records) - 1 - log.best_epoch if log.best_epoch >= 0 else 0
    log.stop_reason = "max_epochs"
    for epoch in range(len(log.records), cfg.max_epochs):
        t0 = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, epoch])
        losses = []
        for b, idx in enumerate(_batches(len(data), cfg.batch_size, rng)):
            losses.append(trainer.step([data[i] for i in idx], f"(epoch {epoch}, batch {b})"))
            log.steps = trainer.state.step
            if cfg.max_steps is not None and log.steps >= cfg.max_steps:
                break
        report = evaluate(model, val, cfg.threshold, cfg.focal)
        rec = EpochRecord(epoch, float(np.mean(losses)), report.dice, report.iou, report.focal,
                          time.perf_counter() - t0)
        log.records.append(rec)
        if verbose:
            verbose(rec)
        if _improves(rec, log):
            log.best_epoch, since_best = epoch, 0
            best_state = model.state_dict()
        else:
            since_best += 1
        if cfg.max_steps is not None and log.steps >= cfg.max_steps:
            log.stop_reason = "max_steps"
            break
        if since_best >= cfg.patience:
            log.stop_reason = "early_stop"
            break
    if restore_best and best_state is not None:
        model.load_state_dict(best_state)
    return model, log, trainer
