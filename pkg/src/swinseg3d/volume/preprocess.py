"""PET/CT preprocessing: normalize, pad depth, stack channels, patch, stitch."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError, ShapeError
from .io import Volume

PET_CHANNEL, CT_CHANNEL = 0, 1


@dataclass
class VolumePatch:
    """Dual-channel block ``[2, depth, H, W]`` cut from a stacked volume at ``origin`` (z, y, x)."""

    data: np.ndarray
    origin: Tuple[int, int, int] = (0, 0, 0)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def depth(self) -> int:
        return self.data.shape[-3]


def normalize_volume(v: Volume) -> Volume:
    """Scale intensities into [0, 1] with the maximum mapped to 1.

    Non-negative volumes are divided by their maximum. Volumes with negative
    values (raw CT in HU) are shifted by their minimum first so the output
    still lies in [0, 1]. An identically-zero volume is returned unchanged.
    """
    data = v.data
    lo = float(data.min()) if data.size else 0.0
    if lo < 0:
        data = data - lo
    hi = float(data.max()) if data.size else 0.0
    if hi == 0.0:
        return v.with_data(data)
    out = data / np.float32(hi)
    return v.with_data(np.minimum(out, 1.0))


def padded_depth(depth: int, multiple: int = 16) -> int:
    if multiple < 1:
        raise ContractError(f"multiple must be >= 1, got {multiple}")
    return max(1, math.ceil(depth / multiple)) * multiple


def pad_depth_array(arr: np.ndarray, multiple: int = 16) -> np.ndarray:
    """Append zero slices along axis -3 until the depth is a multiple of ``multiple``."""
    depth = arr.shape[-3]
    extra = padded_depth(depth, multiple) - depth
    if extra == 0:
        return arr
    widths = [(0, 0)] * arr.ndim
    widths[-3] = (0, extra)
    return np.pad(arr, widths)


def pad_depth(v: Volume, multiple: int = 16) -> Volume:
    return v.with_data(pad_depth_array(v.data, multiple))


def stack_channels(pet: Volume, ct: Volume) -> np.ndarray:
    """Co-registered PET and CT -> ``[2, D, H, W]`` with PET on channel 0."""
    if pet.shape != ct.shape:
        raise ShapeError(f"PET {pet.shape} and CT {ct.shape} must have identical shapes")
    return np.stack([pet.data, ct.data]).astype(np.float32, copy=False)


def patch_starts(depth: int, patch_depth: int, stride: int) -> List[int]:
    if stride < 1:
        raise ContractError(f"stride must be >= 1, got {stride}")
    if stride > patch_depth:
        raise ContractError(f"stride {stride} > patch depth {patch_depth} would skip slices")
    if depth < patch_depth:
        raise ContractError(f"volume depth {depth} is smaller than patch depth {patch_depth}")
    starts = list(range(0, depth - patch_depth + 1, stride))
    if starts[-1] + patch_depth < depth:
        starts.append(depth - patch_depth)
    return starts


def extract_patches(stacked: np.ndarray, depth: int = 16, stride: int = 16) -> List[VolumePatch]:
    """Tile the depth axis of ``[C, D, H, W]`` with full-H*W patches starting at z=0.

    If ``stride`` does not land the last patch on the final slice, one extra
    patch aligned to the end is appended so every slice is covered.
    """
    stacked = np.asarray(stacked)
    if stacked.ndim != 4:
        raise ShapeError(f"expected stacked volume [C, D, H, W], got shape {stacked.shape}")
    return [
        VolumePatch(np.ascontiguousarray(stacked[:, z:z + depth]), (z, 0, 0))
        for z in patch_starts(stacked.shape[1], depth, stride)
    ]


def _missing_ranges(covered: np.ndarray) -> List[Tuple[int, int]]:
    ranges, start = [], None
    for z, ok in enumerate(covered):
        if not ok and start is None:
            start = z
        if ok and start is not None:
            ranges.append((start, z))
            start = None
    if start is not None:
        ranges.append((start, len(covered)))
    return ranges


def stitch_patches(patches: Iterable[Tuple[Sequence[int], np.ndarray]],
                   total_depth: Optional[int] = None,
                   original_depth: Optional[int] = None) -> np.ndarray:
    """Reassemble ``(origin, block)`` pairs along depth, averaging overlaps.

    Blocks are ``[..., d, H, W]``. ``total_depth`` defaults to the furthest
    patch end; ``original_depth`` crops padded slices off the result.
    """
    patches = [(tuple(o), np.asarray(b)) for o, b in patches]
    if not patches:
        raise ContractError("no patches to stitch")
    lead = patches[0][1].shape[:-3]
    H, W = patches[0][1].shape[-2:]
    end = max(o[0] + b.shape[-3] for o, b in patches)
    total = end if total_depth is None else int(total_depth)
    acc = np.zeros(lead + (total, H, W), dtype=np.float64)
    count = np.zeros(total, dtype=np.int64)
    for (z, _, _), block in patches:
        if block.shape[:-3] != lead or block.shape[-2:] != (H, W):
            raise ShapeError(f"patch shape {block.shape} inconsistent with {lead + (H, W)}")
        d = block.shape[-3]
        if z < 0 or z + d > total:
            raise ContractError(f"patch at z={z} with depth {d} exceeds target depth {total}")
        acc[..., z:z + d, :, :] += block
        count[z:z + d] += 1
    gaps = _missing_ranges(count > 0)
    if gaps:
        spans = ", ".join(f"[{a}, {b})" for a, b in gaps)
        raise ContractError(f"patches leave slices uncovered: z in {spans}")
    dtype = np.result_type(patches[0][1].dtype, np.float32)
    out = (acc / count[:, None, None]).astype(dtype)
    if original_depth is not None:
        out = out[..., :original_depth, :, :]
    return np.ascontiguousarray(out)


def preprocess_case(pet: Volume, ct: Volume, multiple: int = 16) -> np.ndarray:
    """Normalize each modality, pad depth, and stack into ``[2, D', H, W]``."""
    return pad_depth_array(stack_channels(normalize_volume(pet), normalize_volume(ct)), multiple)
