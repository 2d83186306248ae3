from .io import MODALITIES, Volume, load_volume, save_volume
from .preprocess import (VolumePatch, extract_patches, normalize_volume, pad_depth, pad_depth_array,
                         padded_depth, preprocess_case, stack_channels, stitch_patches)
from .synth import SynthSpec, ellipsoid_mask, synth_generate

__all__ = [
    "MODALITIES", "Volume", "load_volume", "save_volume", "VolumePatch", "extract_patches",
    "normalize_volume", "pad_depth", "pad_depth_array", "padded_depth", "preprocess_case",
    "stack_channels", "stitch_patches", "SynthSpec", "ellipsoid_mask", "synth_generate",
]
