"""Flat ``key = value`` run configuration shared by every CLI command.

Blank lines and ``#`` comments are ignored. Unknown keys and malformed
values are rejected with the offending line number. Serializing a parsed
config and parsing it again yields an equal config.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional, Tuple

from .errors import ConfigError
from .losses import FocalConfig
from .model import ModelConfig, UNetConfig
from .train import TrainConfig
from .volume import SynthSpec

DOCS = {
    "seed": "run seed: weight init, shuffling, synthetic cases, validation split",
    "model": "network for train/infer: swin or unet3d",
    "base_dim": "SwinUNet3D embedding width (stage widths are 1x, 2x, 4x)",
    "window_size": "attention window edge, clamped per axis to the feature map",
    "blocks_per_stage": "Swin blocks per stage; every second block is shifted",
    "heads": "heads for (enc1, enc2, bottleneck) or 'auto' for width/32",
    "mlp_ratio": "MLP hidden width as a multiple of the stage width",
    "upsample_mode": "transposed_conv or trilinear",
    "relative_position_bias": "learned per-head relative position bias",
    "shifted_windows": "alternate shifted windows inside each stage",
    "qkv_bias": "bias on the query/key/value projection",
    "head_prior": "initial foreground probability of the output layer (0 keeps fan-in init)",
    "unet_base_channels": "first-level channels of the 3D U-Net baseline",
    "dtype": "float32 or float64 (float64 for bitwise-reproducible checks)",
    "lr": "Adam learning rate (constant)",
    "batch_size": "patches per optimizer step",
    "max_epochs": "epoch budget",
    "patience": "epochs without validation Dice improvement before stopping",
    "max_steps": "optimizer step budget, 0 for unlimited",
    "focal_alpha": "focal loss weight on lesion voxels (background gets 1 - alpha)",
    "focal_gamma": "focal loss focusing exponent",
    "val_fraction": "share of cases held out for validation",
    "threshold": "sigmoid probability at or above which a voxel is lesion",
    "patch_depth": "depth of training/inference patches (multiple of 16)",
    "train_stride": "depth stride between training patches",
    "infer_stride": "depth stride between inference patches (overlaps are averaged)",
    "synth_shape": "synthetic volume shape D, H, W",
    "synth_lesions": "min, max lesions per synthetic case",
    "synth_radius": "min, max ellipsoid semi-axis in voxels",
    "synth_pet_hot": "min, max PET lesion intensity",
    "synth_pet_background": "mean PET background intensity",
    "synth_pet_noise": "relative PET background noise amplitude",
    "synth_ct_gradient": "CT ramp amplitude (HU)",
    "synth_ct_noise": "CT noise standard deviation (HU)",
    "synth_ct_offset": "CT ramp offset (HU)",
    "timing_repeats": "inference timing repeats for compare (median is reported, >= 5)",
}


@dataclass
class RunConfig:
    seed: int = 0
    model: str = "swin"
    base_dim: int = 32
    window_size: int = 2
    blocks_per_stage: int = 2
    heads: str = "auto"
    mlp_ratio: int = 4
    upsample_mode: str = "transposed_conv"
    relative_position_bias: bool = False
    shifted_windows: bool = True
    qkv_bias: bool = True
    head_prior: float = 0.01
    unet_base_channels: int = 16
    dtype: str = "float32"
    lr: float = 1e-4
    batch_size: int = 2
    max_epochs: int = 100
    patience: int = 10
    max_steps: int = 0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    val_fraction: float = 0.2
    threshold: float = 0.5
    patch_depth: int = 16
    train_stride: int = 16
    infer_stride: int = 8
    synth_shape: Tuple[int, ...] = (32, 64, 64)
    synth_lesions: Tuple[int, ...] = (1, 3)
    synth_radius: Tuple[float, ...] = (3.0, 6.0)
    synth_pet_hot: Tuple[float, ...] = (6.0, 10.0)
    synth_pet_background: float = 1.0
    synth_pet_noise: float = 0.3
    synth_ct_gradient: float = 400.0
    synth_ct_noise: float = 30.0
    synth_ct_offset: float = -200.0
    timing_repeats: int = 5

    def __post_init__(self):
        if self.model not in ("swin", "unet3d"):
            raise ConfigError(f"model must be 'swin' or 'unet3d', got {self.model!r}")
        if self.timing_repeats < 5:
            raise ConfigError(f"timing_repeats must be >= 5, got {self.timing_repeats}")
        if self.infer_stride < 1 or self.train_stride < 1:
            raise ConfigError("strides must be >= 1")
        if self.heads != "auto":
            _parse_heads(self.heads)

    # ------------------------------------------------------------ views
    def model_config(self) -> ModelConfig:
        return ModelConfig(
            base_dim=self.base_dim, window_size=self.window_size, blocks_per_stage=self.blocks_per_stage,
            heads_per_stage=None if self.heads == "auto" else _parse_heads(self.heads),
            mlp_ratio=self.mlp_ratio, upsample_mode=self.upsample_mode,
            use_relative_position_bias=self.relative_position_bias, shifted_windows=self.shifted_windows,
            qkv_bias=self.qkv_bias, patch_depth=self.patch_depth, head_prior=self.head_prior,
            seed=self.seed, dtype=self.dtype,
        )

    def unet_config(self) -> UNetConfig:
        return UNetConfig(base_channels=self.unet_base_channels, head_prior=self.head_prior,
                          seed=self.seed, dtype=self.dtype)

    def network_config(self, model: Optional[str] = None):
        return self.unet_config() if (model or self.model) == "unet3d" else self.model_config()

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs, patience=self.patience,
            max_steps=self.max_steps or None, focal=FocalConfig(self.focal_alpha, self.focal_gamma),
            val_fraction=self.val_fraction, threshold=self.threshold, seed=self.seed,
        )

    def synth_spec(self, seed: int) -> SynthSpec:
        return SynthSpec(
            shape=tuple(self.synth_shape), lesion_count=tuple(self.synth_lesions),
            radius_range=tuple(self.synth_radius), pet_hot_range=tuple(self.synth_pet_hot),
            pet_background=self.synth_pet_background, pet_noise=self.synth_pet_noise,
            ct_gradient=self.synth_ct_gradient, ct_noise=self.synth_ct_noise,
            ct_offset=self.synth_ct_offset, seed=seed,
        )

    # --------------------------------------------------- text round trip
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"# {DOCS[f.name]}")
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values, seen = {}, {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
            if key not in types:
                raise ConfigError(f"{source}:{n}: unknown key {key!r}")
            if key in seen:
                raise ConfigError(f"{source}:{n}: duplicate key {key!r} (first set on line {seen[key]})")
            seen[key] = n
            try:
                values[key] = _coerce(value, types[key])
            except ValueError as e:
                raise ConfigError(f"{source}:{n}: bad value for {key}: {e}") from None
        try:
            return cls(**values)
        except ConfigError as e:
            raise ConfigError(f"{source}: {e}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), str(path))


def _parse_heads(text: str) -> Tuple[int, int, int]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise ConfigError(f"heads must be 'auto' or three integers, got {text!r}")
    return tuple(int(p) for p in parts)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(text: str, typ):
    typ = str(typ)
    if typ == "bool":
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {text!r}")
        return low == "true"
    if typ == "int":
        return int(text)
    if typ == "float":
        return float(text)
    if typ.startswith("Tuple"):
        conv = int if "int" in typ else float
        return tuple(conv(p.strip()) for p in text.split(","))
    return text
