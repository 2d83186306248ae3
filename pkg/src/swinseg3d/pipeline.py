"""Case discovery, dataset assembly and whole-volume inference."""
from __future__ import annotations

import os
import re
import time
from typing import List, Optional, Tuple

import numpy as np

from .errors import ContractError, ShapeError
from .losses import FocalConfig, binarize, dice, focal_loss, iou
from .train import CaseMetrics, MetricsReport, Sample, predict_logits
from .volume import Volume, extract_patches, load_volume, preprocess_case, save_volume, synth_generate
from .volume.io import volume_paths


def discover_cases(directory) -> List[str]:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"data directory not found: {directory}")
    ids = set()
    for name in os.listdir(directory):
        m = re.match(r"^(.+)_(pet|ct|mask)\.vvol$", name)
        if m:
            ids.add(m.group(1))
    return sorted(ids)


def load_case(directory, case_id: str, need_mask: bool = True):
    """``(pet, ct, mask)`` volumes; a missing modality file is reported by name."""
    paths = volume_paths(directory, case_id)
    wanted = ("pet", "ct", "mask") if need_mask else ("pet", "ct")
    for key in wanted:
        if not os.path.exists(paths[key]):
            raise FileNotFoundError(f"case {case_id}: missing {key.upper()} file {paths[key]}")
    pet, ct = load_volume(paths["pet"]), load_volume(paths["ct"])
    mask = load_volume(paths["mask"]) if need_mask else None
    for v, m in ((pet, "PET"), (ct, "CT"), (mask, "MASK")):
        if v is not None and v.modality != m:
            raise ContractError(f"case {case_id}: expected a {m} volume, file holds {v.modality}")
    if pet.shape != ct.shape or (mask is not None and mask.shape != pet.shape):
        raise ShapeError(f"case {case_id}: modality shapes differ "
                         f"(PET {pet.shape}, CT {ct.shape}, MASK {None if mask is None else mask.shape})")
    return pet, ct, mask


def case_sample(pet: Volume, ct: Volume, mask: Optional[Volume], case_id: str = "",
                multiple: int = 16) -> Tuple[Sample, int]:
    """Preprocessed whole-case sample (depth padded) plus the original depth."""
    stacked = preprocess_case(pet, ct, multiple)
    target = np.zeros(stacked.shape[1:], np.uint8)
    if mask is not None:
        target[:mask.shape[0]] = mask.data.astype(np.uint8)
    return Sample(stacked, target, case_id), pet.shape[0]


def patch_samples(sample: Sample, depth: int = 16, stride: int = 16) -> List[Sample]:
    out = []
    for p in extract_patches(sample.image, depth, stride):
        z = p.origin[0]
        out.append(Sample(p.data, sample.mask[:, z:z + depth], f"{sample.case_id}@z{z}"))
    return out


def synthesize_cases(out_dir, count: int, spec_for_index) -> List[str]:
    """Write ``caseNNN_{pet,ct,mask}.vvol`` triples; ``spec_for_index(i)`` gives each SynthSpec."""
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out_dir}")
    ids = []
    for i in range(count):
        case_id = f"case{i:03d}"
        pet, ct, mask = synth_generate(spec_for_index(i))
        paths = volume_paths(out_dir, case_id)
        for key, vol in (("pet", pet), ("ct", ct), ("mask", mask)):
            save_volume(vol, paths[key])
        ids.append(case_id)
    return ids


def infer_logits(model, pet: Volume, ct: Volume, stride: int = 8, patch_depth: int = 16) -> np.ndarray:
    """Preprocess, tile along depth, predict, blend and crop back to the input depth."""
    if pet.shape != ct.shape:
        raise ShapeError(f"PET {pet.shape} and CT {ct.shape} must have identical shapes")
    stacked = preprocess_case(pet, ct, patch_depth)
    logits = predict_logits(model, stacked, patch_depth, stride)
    return logits[:, :pet.shape[0]]


def infer_mask(model, pet: Volume, ct: Volume, stride: int = 8, threshold: float = 0.5,
               patch_depth: int = 16) -> Volume:
    logits = infer_logits(model, pet, ct, stride, patch_depth)
    return Volume(binarize(logits[0], threshold).astype(np.float32), "MASK", pet.spacing)


def evaluate_cases(model, cases, stride: int = 8, threshold: float = 0.5, focal=None,
                   patch_depth: int = 16, name: str = "model"):
    """Whole-volume metrics for ``(case_id, pet, ct, mask)`` tuples, using :func:`infer_logits`."""
    focal = focal or FocalConfig()
    rows = []
    for case_id, pet, ct, mask in cases:
        t0 = time.perf_counter()
        logits = infer_logits(model, pet, ct, stride, patch_depth)
        seconds = time.perf_counter() - t0
        truth = mask.data[None].astype(np.uint8)
        pred = binarize(logits, threshold)
        loss = focal_loss(logits.astype(np.float64), truth, focal).item()
        rows.append(CaseMetrics(case_id, dice(pred, truth), iou(pred, truth), float(loss), seconds))
    if not rows:
        raise ContractError("no cases to evaluate")
    return MetricsReport(name, rows)
