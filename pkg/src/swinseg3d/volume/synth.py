"""Synthetic PET/CT/mask triples with ellipsoidal hot-spot lesions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..errors import ContractError
from .io import Volume


@dataclass
class SynthSpec:
    shape: Tuple[int, int, int] = (32, 64, 64)
    lesion_count: Tuple[int, int] = (1, 3)
    radius_range: Tuple[float, float] = (3.0, 6.0)
    pet_hot_range: Tuple[float, float] = (6.0, 10.0)
    pet_background: float = 1.0
    pet_noise: float = 0.3
    ct_gradient: float = 400.0
    ct_noise: float = 30.0
    ct_offset: float = -200.0
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.lesion_count
        if lo < 0 or hi < lo:
            raise ContractError(f"invalid lesion_count range {self.lesion_count}")
        rlo, rhi = self.radius_range
        if rlo < 1 or rhi < rlo:
            raise ContractError(f"radius_range must satisfy 1 <= lo <= hi, got {self.radius_range}")
        if self.pet_background <= 0 or self.pet_hot_range[0] < 5 * self.pet_background:
            raise ContractError("pet_hot_range must start at >= 5x pet_background")
        if hi > 0 and any(2 * int(np.ceil(rhi)) + 1 > n for n in self.shape):
            raise ContractError(
                f"lesion radius up to {rhi} cannot fit inside volume {tuple(self.shape)}"
            )


def ellipsoid_mask(shape, center, radii) -> np.ndarray:
    zz, yy, xx = np.ogrid[:shape[0], :shape[1], :shape[2]]
    r = ((zz - center[0]) / radii[0]) ** 2 + ((yy - center[1]) / radii[1]) ** 2 \
        + ((xx - center[2]) / radii[2]) ** 2
    return r <= 1.0


def synth_generate(spec: SynthSpec):
    """Return ``(pet, ct, mask)`` volumes; deterministic in ``spec.seed``.

    Lesion centres are integer voxels chosen so the whole ellipsoid fits in
    the volume. PET is a noisy low background plus one hot value per lesion;
    CT is a smooth linear ramp plus noise, drawn independently of the mask.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    shape = tuple(int(n) for n in spec.shape)
    mask = np.zeros(shape, dtype=bool)
    pet = spec.pet_background * (1.0 + spec.pet_noise * rng.uniform(-1.0, 1.0, size=shape))

    n_lesions = int(rng.integers(spec.lesion_count[0], spec.lesion_count[1] + 1))
    for _ in range(n_lesions):
        radii = rng.uniform(spec.radius_range[0], spec.radius_range[1], size=3)
        reach = np.ceil(radii).astype(int)
        center = [int(rng.integers(r, n - r)) for r, n in zip(reach, shape)]
        lesion = ellipsoid_mask(shape, center, radii)
        hot = rng.uniform(*spec.pet_hot_range)
        pet[lesion] = hot * (1.0 + 0.1 * rng.uniform(-1.0, 1.0, size=int(lesion.sum())))
        mask |= lesion

    ramp_dir = rng.normal(size=3)
    ramp_dir /= np.linalg.norm(ramp_dir)
    grids = np.meshgrid(*(np.linspace(0.0, 1.0, n) for n in shape), indexing="ij")
    ramp = sum(d * g for d, g in zip(ramp_dir, grids))
    ct = spec.ct_offset + spec.ct_gradient * ramp + spec.ct_noise * rng.normal(size=shape)

    return (
        Volume(pet.astype(np.float32), "PET"),
        Volume(ct.astype(np.float32), "CT"),
        Volume(mask.astype(np.float32), "MASK"),
    )
