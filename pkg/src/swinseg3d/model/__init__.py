from .config import ModelConfig, UNetConfig, miniature_config, reference_config
from .layers import Conv3d, ConvTranspose3d, LayerNorm, Linear, Module
from .network import (PUBLISHED_PARAM_COUNT, Downsample, PatchEmbed, SkipFuse, SwinUNet3D, Upsample,
                      param_breakdown, param_count, skip_fuse)
from .swin import (MASK_VALUE, SwinBlock3D, SwinStage, WindowAttention, build_attention_mask,
                   cyclic_shift, effective_shift, effective_window, global_attention,
                   window_attention, window_partition, window_reverse)
from .unet import UNet3D, unet3d_forward


def build_model(cfg):
    """Instantiate the network a config describes."""
    if isinstance(cfg, ModelConfig):
        return SwinUNet3D(cfg)
    if isinstance(cfg, UNetConfig):
        return UNet3D(cfg)
    raise TypeError(f"unsupported config type {type(cfg).__name__}")


def forward(model, patch):
    """Run ``model`` on a ``VolumePatch`` (or raw ``[2, D, H, W]`` array)."""
    data = patch.data if hasattr(patch, "origin") else patch
    return model(data)


__all__ = [
    "ModelConfig", "UNetConfig", "miniature_config", "reference_config", "Module", "Linear",
    "LayerNorm", "Conv3d", "ConvTranspose3d", "SwinUNet3D", "UNet3D", "PatchEmbed", "Downsample",
    "Upsample", "SkipFuse", "skip_fuse", "param_count", "param_breakdown", "PUBLISHED_PARAM_COUNT",
    "SwinBlock3D", "SwinStage", "WindowAttention", "window_attention", "global_attention",
    "window_partition", "window_reverse", "cyclic_shift", "build_attention_mask",
    "effective_window", "effective_shift", "MASK_VALUE", "build_model", "forward",
    "unet3d_forward",
]
