"""SwinUNet3D lesion segmentation for dual-channel PET/CT volumes, in pure numpy."""
from .config import RunConfig
from .errors import (BadMagicError, CheckpointError, CheckpointVersionError, ConfigError,
                     ConfigMismatchError, ContractError, CorruptManifestError, DimensionOverflowError,
                     NonFiniteLossError, ShapeError, SwinSegError, TruncatedPayloadError, VVOLError)
from .estimators import SwinUNet3DSegmenter, UNet3DSegmenter, VolumePreprocessor
from .losses import FocalConfig, binarize, dice, focal_loss, iou
from .model import (ModelConfig, SwinUNet3D, UNet3D, UNetConfig, miniature_config, param_count,
                    reference_config)

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "FocalConfig", "binarize", "dice", "focal_loss", "iou", "ModelConfig", "SwinUNet3D",
    "UNet3D", "UNetConfig", "miniature_config", "reference_config", "param_count", "SwinSegError",
    "ShapeError", "ContractError", "ConfigError", "ConfigMismatchError", "VVOLError", "BadMagicError",
    "TruncatedPayloadError", "DimensionOverflowError", "CheckpointError", "CheckpointVersionError",
    "CorruptManifestError", "NonFiniteLossError", "SwinUNet3DSegmenter", "UNet3DSegmenter",
    "VolumePreprocessor", "__version__",
]
