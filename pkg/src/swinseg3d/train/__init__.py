from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, write_checkpoint
from .engine import (CaseMetrics, EpochRecord, MetricsReport, Sample, TrainConfig, Trainer, TrainLog,
                     evaluate, predict_logits, split_cases, train)

__all__ = [
    "Checkpoint", "load_checkpoint", "save_checkpoint", "write_checkpoint", "CaseMetrics",
    "EpochRecord", "MetricsReport", "Sample", "TrainConfig", "Trainer", "TrainLog", "evaluate",
    "predict_logits", "split_cases", "train",
]
