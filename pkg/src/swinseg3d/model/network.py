"""SwinUNet3D: patch embedding, two Swin encoder stages, bottleneck, two decoder
stages with skip fusion, patch expansion and a 1x1x1 segmentation head."""
from __future__ import annotations

from typing import Dict

import numpy as np

from ..errors import ShapeError
from ..tensor import Tensor, as_tensor, concat, conv3d, trilinear_upsample
from ..validation import check_divisible
from .config import OVERALL_SCALE, ModelConfig
from .layers import Conv3d, ConvTranspose3d, Module, apply_head_prior
from .swin import SwinStage


def skip_fuse(decoder_feat, encoder_feat, weight, bias=None) -> Tensor:
    """Concatenate ``[C, ...]`` features on channels and project ``2C -> C`` pointwise.

    ``weight`` is a ``[C, 2C, 1, 1, 1]`` kernel.
    """
    decoder_feat, encoder_feat = as_tensor(decoder_feat), as_tensor(encoder_feat)
    if decoder_feat.shape != encoder_feat.shape:
        raise ShapeError(
            f"skip fusion needs matching feature shapes, got {decoder_feat.shape} and {encoder_feat.shape}"
        )
    return conv3d(concat([decoder_feat, encoder_feat], axis=0), weight, bias)


class PatchEmbed(Module):
    def __init__(self, in_ch, dim, patch, rng, dtype=np.float32):
        super().__init__()
        self.patch = tuple(patch)
        self.proj = Conv3d(in_ch, dim, self.patch, rng, stride=self.patch, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        check_divisible(x.shape[1:], self.patch, "patch_embed input")
        return self.proj(x)


class Downsample(Module):
    """``C x D x H x W -> 2C x D/2 x H/2 x W/2`` via a kernel-2 stride-2 convolution."""

    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.conv = Conv3d(dim, 2 * dim, 2, rng, stride=2, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if any(n % 2 for n in x.shape[1:]):
            raise ShapeError(f"downsample needs even spatial dims, got {x.shape}")
        return self.conv(x)


class Upsample(Module):
    """``C x D x H x W -> C/2 x 2D x 2H x 2W``."""

    def __init__(self, dim, rng, mode="transposed_conv", dtype=np.float32):
        super().__init__()
        if dim % 2:
            raise ShapeError(f"upsample needs an even channel count, got {dim}")
        self.mode = mode
        if mode == "transposed_conv":
            self.conv = ConvTranspose3d(dim, dim // 2, 2, rng, stride=2, dtype=dtype)
        else:
            self.conv = Conv3d(dim, dim // 2, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if self.mode == "transposed_conv":
            return self.conv(x)
        return self.conv(trilinear_upsample(x, 2))


class SkipFuse(Module):
    def __init__(self, dim, rng, dtype=np.float32):
        super().__init__()
        self.proj = Conv3d(2 * dim, dim, 1, rng, dtype=dtype)

    def forward(self, decoder_feat, encoder_feat) -> Tensor:
        return skip_fuse(decoder_feat, encoder_feat, self.proj.weight, self.proj.bias)


class SwinUNet3D(Module):
    """Maps a ``[2, D, H, W]`` PET/CT patch to ``[out_classes, D, H, W]`` logits.

    D, H and W must be multiples of 16 (the patch embedding factor times two
    2x downsamples).
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype).type
        rng = np.random.default_rng(cfg.seed)
        c1, c2, c3 = cfg.stage_dims
        h1, h2, h3 = cfg.heads
        stage = dict(window=cfg.window_size, depth=cfg.blocks_per_stage, rng=rng,
                     mlp_ratio=cfg.mlp_ratio, qkv_bias=cfg.qkv_bias,
                     position_bias=cfg.use_relative_position_bias, shift=cfg.shifted_windows,
                     dtype=dtype)

        self.embed = PatchEmbed(cfg.in_channels, c1, cfg.embed_patch, rng, dtype)
        self.enc1 = SwinStage(c1, h1, **stage)
        self.down1 = Downsample(c1, rng, dtype)
        self.enc2 = SwinStage(c2, h2, **stage)
        self.down2 = Downsample(c2, rng, dtype)
        self.bottleneck = SwinStage(c3, h3, **stage)
        self.up1 = Upsample(c3, rng, cfg.upsample_mode, dtype)
        self.fuse1 = SkipFuse(c2, rng, dtype)
        self.dec1 = SwinStage(c2, h2, **stage)
        self.up2 = Upsample(c2, rng, cfg.upsample_mode, dtype)
        self.fuse2 = SkipFuse(c1, rng, dtype)
        self.dec2 = SwinStage(c1, h1, **stage)
        self.expand = ConvTranspose3d(c1, c1, cfg.embed_patch, rng, stride=cfg.embed_patch, dtype=dtype)
        self.head = Conv3d(c1, cfg.out_classes, 1, rng, dtype=dtype)
        apply_head_prior(self.head, cfg.head_prior)

    def check_input(self, x) -> Tensor:
        x = as_tensor(x, dtype=np.dtype(self.cfg.dtype))
        if x.ndim != 4 or x.shape[0] != self.cfg.in_channels:
            raise ShapeError(f"expected input [{self.cfg.in_channels}, D, H, W], got {x.shape}")
        check_divisible(x.shape[1:], (OVERALL_SCALE,) * 3, "SwinUNet3D input")
        return x

    def forward(self, x, return_stages: bool = False):
        x = self.check_input(x)
        stages: Dict[str, tuple] = {}
        t = self.embed(x)
        e1 = self.enc1(t)
        e2 = self.enc2(self.down1(e1))
        b = self.bottleneck(self.down2(e2))
        d1 = self.dec1(self.fuse1(self.up1(b), e2))
        d2 = self.dec2(self.fuse2(self.up2(d1), e1))
        logits = self.head(self.expand(d2))
        if return_stages:
            for name, v in (("embed", t), ("enc1", e1), ("enc2", e2), ("bottleneck", b),
                            ("dec1", d1), ("dec2", d2), ("logits", logits)):
                stages[name] = v.shape
            return logits, stages
        return logits


def param_count(model_or_cfg) -> int:
    """Exact number of trainable scalars (independent of input size)."""
    if isinstance(model_or_cfg, Module):
        return model_or_cfg.num_parameters()
    if isinstance(model_or_cfg, ModelConfig):
        return SwinUNet3D(model_or_cfg).num_parameters()
    from .unet import UNet3D
    return UNet3D(model_or_cfg).num_parameters()


PUBLISHED_PARAM_COUNT = 810_721


def param_breakdown(model: Module) -> Dict[str, int]:
    """Trainable scalars per top-level submodule, in build order."""
    out: Dict[str, int] = {}
    for name, p in model.named_parameters():
        top = name.split(".")[0]
        out[top] = out.get(top, 0) + p.size
    return out
