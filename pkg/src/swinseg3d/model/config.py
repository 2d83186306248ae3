from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Optional, Tuple

from ..errors import ConfigError

UPSAMPLE_MODES = ("transposed_conv", "trilinear")
OVERALL_SCALE = 16


def check_prior(p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"head_prior must lie in [0, 1), got {p}")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; two configs that compare equal build identical networks.

    ``heads_per_stage`` covers (encoder 1, encoder 2, bottleneck); decoder
    stages reuse the encoder head count at the same width. ``None`` means
    ``max(1, stage_dim // 32)``.
    """

    in_channels: int = 2
    out_classes: int = 1
    base_dim: int = 32
    window_size: int = 2
    embed_patch: Tuple[int, int, int] = (4, 4, 4)
    blocks_per_stage: int = 2
    heads_per_stage: Optional[Tuple[int, int, int]] = None
    mlp_ratio: int = 4
    upsample_mode: str = "transposed_conv"
    use_relative_position_bias: bool = False
    shifted_windows: bool = True
    qkv_bias: bool = True
    patch_depth: int = 16
    head_prior: float = 0.01
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.embed_patch = tuple(int(v) for v in self.embed_patch)
        if self.heads_per_stage is not None:
            self.heads_per_stage = tuple(int(v) for v in self.heads_per_stage)
        self.validate()

    @property
    def stage_dims(self) -> Tuple[int, int, int]:
        return (self.base_dim, 2 * self.base_dim, 4 * self.base_dim)

    @property
    def heads(self) -> Tuple[int, int, int]:
        if self.heads_per_stage is not None:
            return self.heads_per_stage
        return tuple(max(1, d // 32) for d in self.stage_dims)

    def validate(self) -> None:
        if len(self.embed_patch) != 3:
            raise ConfigError(f"embed_patch needs 3 values, got {self.embed_patch}")
        if any(p * 4 != OVERALL_SCALE for p in self.embed_patch):
            raise ConfigError(
                f"embed_patch {self.embed_patch} x 2 downsamples must equal {OVERALL_SCALE} per axis"
            )
        if self.base_dim < 2 or self.base_dim % 2:
            raise ConfigError(f"base_dim must be a positive even number, got {self.base_dim}")
        if len(self.heads) != 3:
            raise ConfigError(f"heads_per_stage needs 3 values, got {self.heads}")
        for dim, h in zip(self.stage_dims, self.heads):
            if h < 1 or dim % h:
                raise ConfigError(f"stage dim {dim} is not divisible by {h} heads")
        if self.window_size < 1:
            raise ConfigError(f"window_size must be >= 1, got {self.window_size}")
        if self.blocks_per_stage < 1 or self.mlp_ratio < 1:
            raise ConfigError("blocks_per_stage and mlp_ratio must be >= 1")
        if self.upsample_mode not in UPSAMPLE_MODES:
            raise ConfigError(f"upsample_mode must be one of {UPSAMPLE_MODES}, got {self.upsample_mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.patch_depth % OVERALL_SCALE:
            raise ConfigError(f"patch_depth must be a multiple of {OVERALL_SCALE}")
        check_prior(self.head_prior)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


def reference_config(**overrides) -> ModelConfig:
    """Published hyperparameters (base 32, window 2) with the implementer defaults filled in."""
    return ModelConfig(**overrides)


def miniature_config(**overrides) -> ModelConfig:
    params = dict(base_dim=8)
    params.update(overrides)
    return ModelConfig(**params)


@dataclass
class UNetConfig:
    in_channels: int = 2
    out_classes: int = 1
    base_channels: int = 16
    head_prior: float = 0.01
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_classes < 1 or self.base_channels < 1:
            raise ConfigError("UNetConfig channel counts must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        check_prior(self.head_prior)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown UNetConfig keys: {sorted(unknown)}")
        return cls(**d)
