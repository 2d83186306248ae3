"""Volume container and the VVOL file format.

A VVOL file is one ASCII header line::

    VVOL1 <modality> <D> <H> <W> <sz> <sy> <sx>\\n

followed by ``D*H*W`` little-endian float32 values, z-major then y then x.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import (BadMagicError, ContractError, DimensionOverflowError, TruncatedPayloadError,
                      VVOLError)

MAGIC = "VVOL1"
MODALITIES = ("PET", "CT", "MASK")
MAX_VOXELS = 2 ** 31 - 1
_MAX_HEADER = 512


@dataclass
class Volume:
    """Single-modality 3D scalar field with voxel spacing (mm, informational)."""

    data: np.ndarray
    modality: str = "PET"
    spacing: tuple = field(default=(1.0, 1.0, 1.0))

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ContractError(f"Volume data must be 3-D (D, H, W), got shape {self.data.shape}")
        self.modality = self.modality.upper()
        if self.modality not in MODALITIES:
            raise ContractError(f"unknown modality {self.modality!r}; expected one of {MODALITIES}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3:
            raise ContractError(f"spacing needs 3 values, got {self.spacing}")
        if self.modality == "MASK" and not np.isin(self.data, (0.0, 1.0)).all():
            raise ContractError("MASK volumes may only contain 0 or 1")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def with_data(self, data) -> "Volume":
        return Volume(data, self.modality, self.spacing)


def save_volume(v: Volume, path) -> None:
    D, H, W = v.shape
    sz, sy, sx = v.spacing
    header = f"{MAGIC} {v.modality} {D} {H} {W} {sz!r} {sy!r} {sx!r}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(v.data.astype("<f4", copy=False).tobytes(order="C"))


def _parse_header(line: bytes, path) -> tuple:
    try:
        text = line.decode("ascii")
    except UnicodeDecodeError:
        raise BadMagicError(f"{path}: header is not ASCII") from None
    parts = text.split()
    if not parts or parts[0] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {parts[0] if parts else ''!r}, expected {MAGIC!r}")
    if len(parts) != 8:
        raise VVOLError(f"{path}: header needs 8 fields, got {len(parts)}")
    modality = parts[1]
    if modality not in MODALITIES:
        raise VVOLError(f"{path}: unknown modality {modality!r}")
    try:
        dims = tuple(int(p) for p in parts[2:5])
        spacing = tuple(float(p) for p in parts[5:8])
    except ValueError as exc:
        raise VVOLError(f"{path}: malformed header field ({exc})") from None
    if any(d < 1 for d in dims):
        raise DimensionOverflowError(f"{path}: non-positive dimension in {dims}")
    if int(np.prod(dims, dtype=object)) > MAX_VOXELS:
        raise DimensionOverflowError(f"{path}: {dims} exceeds {MAX_VOXELS} voxels")
    return modality, dims, spacing


def load_volume(path) -> Volume:
    with open(path, "rb") as fh:
        line = fh.readline(_MAX_HEADER)
        if not line.endswith(b"\n"):
            if not line.startswith(MAGIC.encode()):
                raise BadMagicError(f"{path}: bad magic, expected {MAGIC!r}")
            raise VVOLError(f"{path}: header line not terminated within {_MAX_HEADER} bytes")
        modality, dims, spacing = _parse_header(line[:-1], path)
        expected = int(np.prod(dims)) * 4
        payload = fh.read(expected + 1)
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"{path}: header declares {dims} ({expected // 4} floats), payload holds {len(payload) / 4:g}"
        )
    if len(payload) > expected:
        raise VVOLError(f"{path}: trailing bytes after {expected // 4} floats")
    data = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return Volume(data, modality, spacing)


def volume_paths(directory, case_id: str) -> dict:
    return {m.lower(): os.path.join(directory, f"{case_id}_{m.lower()}.vvol") for m in MODALITIES}
