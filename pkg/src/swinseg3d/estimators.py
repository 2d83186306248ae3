"""scikit-learn style wrappers: a preprocessing transformer and two segmenters.

``X`` is a batch of dual-channel volumes ``[n, 2, D, H, W]`` (PET channel 0,
CT channel 1) and ``y`` the matching binary masks ``[n, D, H, W]``. Depth
padding to the network's scaling factor happens inside the segmenters and
predictions are cropped back to the input depth.
"""
from __future__ import annotations

from typing import Optional, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import ShapeError
from .losses import FocalConfig, binarize, dice
from .model import ModelConfig, SwinUNet3D, UNet3D, UNetConfig
from .pipeline import patch_samples
from .train import Sample, TrainConfig, predict_logits, split_cases, train
from .validation import check_array, check_binary
from .volume import Volume, normalize_volume, pad_depth_array

MULTIPLE = 16


def _check_X(X) -> np.ndarray:
    X = check_array(X, 5, "X")
    if X.shape[1] != 2:
        raise ShapeError(f"X must hold 2 channels (PET, CT) on axis 1, got shape {X.shape}")
    return X


def _check_y(y, X) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim == 5 and y.shape[1] == 1:
        y = y[:, 0]
    if y.shape != X.shape[:1] + X.shape[2:]:
        raise ShapeError(f"y must have shape {X.shape[:1] + X.shape[2:]}, got {y.shape}")
    return check_binary(y, "y").astype(np.uint8)


class VolumePreprocessor(TransformerMixin, BaseEstimator):
    """Per-case, per-channel intensity normalization into [0, 1], optionally depth-padded.

    Stateless: ``fit`` only validates input and records the channel count.
    """

    def __init__(self, pad: bool = False, multiple: int = MULTIPLE):
        self.pad = pad
        self.multiple = multiple

    def fit(self, X, y=None):
        X = _check_X(X)
        self.n_channels_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_channels_")
        X = _check_X(X)
        out = []
        for case in X:
            chans = [normalize_volume(Volume(case[c], m)).data for c, m in enumerate(("PET", "CT"))]
            stacked = np.stack(chans)
            out.append(pad_depth_array(stacked, self.multiple) if self.pad else stacked)
        return np.stack(out).astype(np.float32)


class _Segmenter(BaseEstimator):
    def _network(self):
        raise NotImplementedError

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience=self.patience, max_steps=self.max_steps,
                           focal=FocalConfig(self.focal_alpha, self.focal_gamma),
                           val_fraction=self.val_fraction, threshold=self.threshold, seed=self.seed)

    def fit(self, X, y):
        X = _check_X(X)
        y = _check_y(y, X)
        Xp, yp = pad_depth_array(X, MULTIPLE), pad_depth_array(y, MULTIPLE)
        ids = [str(i) for i in range(len(X))]
        if self.early_stopping and len(X) >= 2:
            tr, va = split_cases(ids, self.val_fraction, self.seed)
        else:
            tr, va = ids, ids
        samples = {i: patch_samples(Sample(Xp[int(i)], yp[int(i)], i), 16, 16) for i in ids}
        model = self._network()
        self.model_, self.train_log_, _ = train(
            model, [p for i in tr for p in samples[i]], self._train_config(),
            [p for i in va for p in samples[i]],
        )
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        """Voxel logits ``[n, D, H, W]``."""
        check_is_fitted(self, "model_")
        X = _check_X(X)
        depth = X.shape[2]
        Xp = pad_depth_array(X, MULTIPLE)
        return np.stack([predict_logits(self.model_, case, 16, self.stride)[0, :depth] for case in Xp])

    def predict_proba(self, X) -> np.ndarray:
        """Lesion probability per voxel, ``[n, D, H, W]``."""
        logits = self.decision_function(X).astype(np.float64)
        return 1.0 / (1.0 + np.exp(-logits))

    def predict(self, X) -> np.ndarray:
        return binarize(self.decision_function(X), self.threshold)

    def score(self, X, y, sample_weight=None) -> float:
        """Mean per-case Dice."""
        X = _check_X(X)
        y = _check_y(y, X)
        pred = self.predict(X)
        scores = [dice(p, t) for p, t in zip(pred, y)]
        return float(np.average(scores, weights=sample_weight))


class SwinUNet3DSegmenter(_Segmenter):
    def __init__(self, base_dim: int = 32, window_size: int = 2, blocks_per_stage: int = 2,
                 heads: Optional[Tuple[int, int, int]] = None, mlp_ratio: int = 4,
                 upsample_mode: str = "transposed_conv", relative_position_bias: bool = False,
                 shifted_windows: bool = True, head_prior: float = 0.01, lr: float = 1e-4,
                 batch_size: int = 2, max_epochs: int = 100, patience: int = 10,
                 max_steps: Optional[int] = None, focal_alpha: float = 0.25, focal_gamma: float = 2.0,
                 early_stopping: bool = True, val_fraction: float = 0.2, threshold: float = 0.5,
                 stride: int = 8, seed: int = 0, dtype: str = "float32"):
        self.base_dim = base_dim
        self.window_size = window_size
        self.blocks_per_stage = blocks_per_stage
        self.heads = heads
        self.mlp_ratio = mlp_ratio
        self.upsample_mode = upsample_mode
        self.relative_position_bias = relative_position_bias
        self.shifted_windows = shifted_windows
        self.head_prior = head_prior
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.max_steps = max_steps
        self.focal_alpha = focal_alpha
        self.focal_gamma = focal_gamma
        self.early_stopping = early_stopping
        self.val_fraction = val_fraction
        self.threshold = threshold
        self.stride = stride
        self.seed = seed
        self.dtype = dtype

    def _network(self):
        return SwinUNet3D(ModelConfig(
            base_dim=self.base_dim, window_size=self.window_size, blocks_per_stage=self.blocks_per_stage,
            heads_per_stage=self.heads, mlp_ratio=self.mlp_ratio, upsample_mode=self.upsample_mode,
            use_relative_position_bias=self.relative_position_bias, shifted_windows=self.shifted_windows,
            head_prior=self.head_prior, seed=self.seed, dtype=self.dtype,
        ))


class UNet3DSegmenter(_Segmenter):
    def __init__(self, base_channels: int = 16, head_prior: float = 0.01, lr: float = 1e-4,
                 batch_size: int = 2, max_epochs: int = 100, patience: int = 10,
                 max_steps: Optional[int] = None, focal_alpha: float = 0.25, focal_gamma: float = 2.0,
                 early_stopping: bool = True, val_fraction: float = 0.2, threshold: float = 0.5,
                 stride: int = 8, seed: int = 0, dtype: str = "float32"):
        self.base_channels = base_channels
        self.head_prior = head_prior
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.max_steps = max_steps
        self.focal_alpha = focal_alpha
        self.focal_gamma = focal_gamma
        self.early_stopping = early_stopping
        self.val_fraction = val_fraction
        self.threshold = threshold
        self.stride = stride
        self.seed = seed
        self.dtype = dtype

    def _network(self):
        return UNet3D(UNetConfig(base_channels=self.base_channels, head_prior=self.head_prior,
                                 seed=self.seed, dtype=self.dtype))
