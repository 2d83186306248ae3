"""Binary focal loss and the Dice / IoU overlap metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor, as_tensor
from .tensor.tensor import make_result
from .validation import check_binary

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def focal_loss(logits, target, cfg: FocalConfig = FocalConfig()) -> Tensor:
    """Voxel-mean binary focal loss ``-a_t (1 - p_t)^gamma log(p_t)``.

    ``p_t`` is the sigmoid probability of the true class; ``a_t`` is
    ``alpha`` on lesion voxels and ``1 - alpha`` on background. ``p_t`` is
    clamped to ``[1e-7, 1 - 1e-7]`` before the log.
    """
    logits = as_tensor(logits)
    t = np.asarray(target)
    if t.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} and target {t.shape} must have identical shapes")
    t = check_binary(t, "target")
    x = logits.data
    p = _sigmoid(x)
    pt_raw = np.where(t, p, 1.0 - p)
    pt = np.clip(pt_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
    a_t = np.where(t, cfg.alpha, 1.0 - cfg.alpha)
    g = cfg.gamma
    one_minus = 1.0 - pt
    log_pt = np.log(pt)
    mod = one_minus ** g
    n = x.size
    loss = -(a_t * mod * log_pt).sum() / n

    def bw(grad_out):
        # d/dp_t of -(1-p_t)^g log p_t
        if g == 0:
            d_pt = -1.0 / pt
        else:
            d_pt = g * one_minus ** (g - 1.0) * log_pt - mod / pt
        clamped = (pt_raw < PROB_CLAMP) | (pt_raw > 1.0 - PROB_CLAMP)
        d_x = a_t * d_pt * p * (1.0 - p) * np.where(t, 1.0, -1.0)
        d_x[clamped] = 0.0
        return ((grad_out * d_x / n).astype(x.dtype, copy=False),)

    return make_result(np.asarray(loss, dtype=x.dtype), (logits,), bw)


@dataclass(frozen=True)
class OverlapCounts:
    intersection: int
    predicted: int
    truth: int

    @property
    def union(self) -> int:
        return self.predicted + self.truth - self.intersection

    @classmethod
    def from_masks(cls, pred, truth) -> "OverlapCounts":
        p, g = _pair(pred, truth)
        return cls(int(np.count_nonzero(p & g)), int(np.count_nonzero(p)), int(np.count_nonzero(g)))


def _pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred {pred.shape} and truth {truth.shape} must have identical shapes")
    return check_binary(pred, "pred"), check_binary(truth, "truth")


def dice(pred, truth) -> float:
    """``2|P & G| / (|P| + |G|)``; two empty masks score 1.0."""
    c = OverlapCounts.from_masks(pred, truth)
    denom = c.predicted + c.truth
    return 1.0 if denom == 0 else 2.0 * c.intersection / denom


def iou(pred, truth) -> float:
    """``|P & G| / |P | G|``; two empty masks score 1.0."""
    c = OverlapCounts.from_masks(pred, truth)
    return 1.0 if c.union == 0 else c.intersection / c.union


def binarize(logits, threshold: float = 0.5) -> np.ndarray:
    """Voxel is 1 iff ``sigmoid(logit) >= threshold`` (boundary inclusive)."""
    x = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    if not 0.0 <= threshold <= 1.0:
        raise ContractError(f"threshold must lie in [0, 1], got {threshold}")
    return (_sigmoid(x.astype(np.float64)) >= threshold).astype(np.uint8)
