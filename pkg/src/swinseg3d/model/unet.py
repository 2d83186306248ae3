"""Compact 3-level 3D U-Net used as the convolutional baseline."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from ..tensor import Tensor, as_tensor, concat, max_pool3d, relu
from ..validation import check_divisible
from .config import UNetConfig
from .layers import Conv3d, ConvTranspose3d, LayerNorm, Module, apply_head_prior


class DoubleConv(Module):
    """(3x3x3 conv -> channel layer norm -> ReLU) twice."""

    def __init__(self, in_ch, out_ch, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv3d(in_ch, out_ch, 3, rng, padding=1, dtype=dtype)
        self.norm1 = LayerNorm(out_ch, dtype)
        self.conv2 = Conv3d(out_ch, out_ch, 3, rng, padding=1, dtype=dtype)
        self.norm2 = LayerNorm(out_ch, dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = relu(self.norm1(self.conv1(x), axis=0))
        return relu(self.norm2(self.conv2(x), axis=0))


class UNet3D(Module):
    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype).type
        rng = np.random.default_rng(cfg.seed)
        b = cfg.base_channels
        self.enc1 = DoubleConv(cfg.in_channels, b, rng, dtype)
        self.enc2 = DoubleConv(b, 2 * b, rng, dtype)
        self.bottleneck = DoubleConv(2 * b, 4 * b, rng, dtype)
        self.up1 = ConvTranspose3d(4 * b, 2 * b, 2, rng, stride=2, dtype=dtype)
        self.dec1 = DoubleConv(4 * b, 2 * b, rng, dtype)
        self.up2 = ConvTranspose3d(2 * b, b, 2, rng, stride=2, dtype=dtype)
        self.dec2 = DoubleConv(2 * b, b, rng, dtype)
        self.head = Conv3d(b, cfg.out_classes, 1, rng, dtype=dtype)
        apply_head_prior(self.head, cfg.head_prior)

    def check_input(self, x) -> Tensor:
        x = as_tensor(x, dtype=np.dtype(self.cfg.dtype))
        if x.ndim != 4 or x.shape[0] != self.cfg.in_channels:
            raise ShapeError(f"expected input [{self.cfg.in_channels}, D, H, W], got {x.shape}")
        check_divisible(x.shape[1:], (4, 4, 4), "UNet3D input")
        return x

    def forward(self, x) -> Tensor:
        x = self.check_input(x)
        e1 = self.enc1(x)
        e2 = self.enc2(max_pool3d(e1))
        b = self.bottleneck(max_pool3d(e2))
        d1 = self.dec1(concat([self.up1(b), e2], axis=0))
        d2 = self.dec2(concat([self.up2(d1), e1], axis=0))
        return self.head(d2)


def unet3d_forward(model: UNet3D, patch) -> Tensor:
    data = patch.data if hasattr(patch, "origin") else patch
    return model(data)
