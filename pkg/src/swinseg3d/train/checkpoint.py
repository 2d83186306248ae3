"""Checkpoint files: an ASCII manifest followed by a little-endian tensor blob.

Layout::

    SWINSEG3D-CHECKPOINT
    version = 1
    kind = swin
    model.base_dim = 8
    ...
    tensor embed.proj.weight <f4 8,2,4,4 0 2048
    end
    <raw bytes>

Values are JSON literals, so every float round-trips exactly and saving a
loaded checkpoint reproduces the original file byte for byte.
"""
from __future__ import annotations

import json
import os
from collections import OrderedDict
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from ..errors import CheckpointVersionError, ConfigMismatchError, CorruptManifestError
from ..losses import FocalConfig
from ..model import ModelConfig, SwinUNet3D, UNet3D, UNetConfig
from ..tensor import AdamState
from .engine import EpochRecord, TrainConfig, TrainLog

MAGIC = "SWINSEG3D-CHECKPOINT"
VERSION = 1
KINDS = {"swin": (ModelConfig, SwinUNet3D), "unet3d": (UNetConfig, UNet3D)}
_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


@dataclass
class Checkpoint:
    kind: str
    config: object
    weights: "OrderedDict[str, np.ndarray]"
    optimizer: Optional[AdamState] = None
    log: Optional[TrainLog] = None
    train_config: Optional[TrainConfig] = None
    extras: Dict[str, object] = field(default_factory=dict)

    def build_model(self, expected_config=None):
        if expected_config is not None and expected_config != self.config:
            raise ConfigMismatchError(_config_diff(expected_config, self.config))
        model = KINDS[self.kind][1](self.config)
        model.load_state_dict(self.weights)
        return model

    def restore_into(self, model) -> None:
        if getattr(model, "cfg", None) != self.config:
            raise ConfigMismatchError(_config_diff(getattr(model, "cfg", None), self.config))
        model.load_state_dict(self.weights)


def _config_diff(expected, stored) -> str:
    if expected is None or type(expected) is not type(stored):
        return f"checkpoint holds {type(stored).__name__}, expected {type(expected).__name__}"
    diffs = [f"{f.name}: expected {getattr(expected, f.name)!r}, checkpoint has {getattr(stored, f.name)!r}"
             for f in fields(stored) if getattr(expected, f.name) != getattr(stored, f.name)]
    return "config mismatch; " + "; ".join(diffs)


def model_kind(model) -> str:
    for kind, (_, cls) in KINDS.items():
        if isinstance(model, cls):
            return kind
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _dump(value) -> str:
    return json.dumps(value, sort_keys=True)


def _dataclass_lines(prefix: str, obj) -> List[str]:
    out = []
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, FocalConfig):
            v = {"alpha": v.alpha, "gamma": v.gamma}
        elif isinstance(v, tuple):
            v = list(v)
        out.append(f"{prefix}.{f.name} = {_dump(v)}")
    return out


def save_checkpoint(path, model, optimizer: Optional[AdamState] = None, log: Optional[TrainLog] = None,
                    train_config: Optional[TrainConfig] = None, **extras) -> None:
    weights = OrderedDict((n, p.data) for n, p in model.named_parameters())
    ckpt = Checkpoint(model_kind(model), model.cfg, weights, optimizer, log, train_config, extras)
    write_checkpoint(path, ckpt)


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    lines = [MAGIC, f"version = {VERSION}", f"kind = {_dump(ckpt.kind)}"]
    lines += _dataclass_lines("model", ckpt.config)
    if ckpt.train_config is not None:
        lines += _dataclass_lines("train", ckpt.train_config)
    tensors = list(ckpt.weights.items())
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        for name in ("lr", "beta1", "beta2", "epsilon", "step"):
            lines.append(f"adam.{name} = {_dump(getattr(opt, name))}")
        names = list(ckpt.weights)
        if opt.m:
            tensors += [(f"adam.m.{n}", a) for n, a in zip(names, opt.m)]
            tensors += [(f"adam.v.{n}", a) for n, a in zip(names, opt.v)]
    if ckpt.log is not None:
        log = ckpt.log
        lines += [f"log.best_epoch = {log.best_epoch}", f"log.stop_reason = {_dump(log.stop_reason)}",
                  f"log.steps = {log.steps}"]
        for r in log.records:
            lines.append(f"log.record = {_dump([r.epoch, r.train_loss, r.val_dice, r.val_iou, r.val_loss, r.seconds])}")
    for k in sorted(ckpt.extras):
        lines.append(f"extra.{k} = {_dump(ckpt.extras[k])}")
    offset = 0
    blobs = []
    for name, arr in tensors:
        arr = np.asarray(arr)
        code = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        shape = ",".join(str(n) for n in arr.shape)
        lines.append(f"tensor {name} {code} {shape} {offset} {len(raw)}")
        blobs.append(raw)
        offset += len(raw)
    lines.append("end")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def _parse_kv(line: str, lineno: int):
    key, sep, value = line.partition(" = ")
    if not sep:
        raise CorruptManifestError(f"manifest line {lineno}: expected 'key = value', got {line!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        raise CorruptManifestError(f"manifest line {lineno}: bad value {value!r}") from None


def _build_dataclass(cls, values: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise CorruptManifestError(f"unknown {what} keys in manifest: {sorted(unknown)}")
    if "focal" in values:
        values = dict(values, focal=FocalConfig(**values["focal"]))
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise CorruptManifestError(f"invalid {what} section: {e}") from None


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if not raw.startswith(MAGIC.encode() + b"\n") or cut < 0:
        raise CorruptManifestError(f"{path}: not a checkpoint (missing header or 'end' line)")
    try:
        text = raw[:cut].decode("ascii")
    except UnicodeDecodeError:
        raise CorruptManifestError(f"{path}: manifest is not ASCII") from None
    blob = raw[cut + len(marker):]
    lines = text.split("\n")[1:]
    if not lines or not lines[0].startswith("version = "):
        raise CorruptManifestError(f"{path}: manifest line 2 must declare the version")
    _, version = _parse_kv(lines[0], 2)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")

    kind = None
    sections: Dict[str, dict] = {"model": {}, "train": {}, "adam": {}, "extra": {}}
    log_meta, records, index = {}, [], []
    for n, line in enumerate(lines[1:], start=3):
        if line.startswith("tensor "):
            parts = line.split(" ")
            if len(parts) != 6 or parts[2] not in _DTYPES:
                raise CorruptManifestError(f"manifest line {n}: bad tensor entry {line!r}")
            try:
                shape = tuple(int(v) for v in parts[3].split(",")) if parts[3] else ()
                index.append((parts[1], _DTYPES[parts[2]], shape, int(parts[4]), int(parts[5])))
            except ValueError:
                raise CorruptManifestError(f"manifest line {n}: bad tensor entry {line!r}") from None
            continue
        key, value = _parse_kv(line, n)
        if key == "kind":
            kind = value
        elif key == "log.record":
            records.append(EpochRecord(int(value[0]), *map(float, value[1:])))
        elif key.startswith("log."):
            log_meta[key[4:]] = value
        else:
            section, _, name = key.partition(".")
            if section not in sections or not name:
                raise CorruptManifestError(f"manifest line {n}: unknown key {key!r}")
            sections[section][name] = value
    if kind not in KINDS:
        raise CorruptManifestError(f"{path}: unknown model kind {kind!r}")

    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name, dtype, shape, offset, nbytes in index:
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected or offset + nbytes > len(blob):
            raise CorruptManifestError(f"{path}: tensor {name} does not fit the payload")
        arr = np.frombuffer(blob, dtype=dtype, count=expected // dtype.itemsize, offset=offset)
        arrays[name] = arr.reshape(shape).astype(dtype.newbyteorder("="))
    end = max((o + b for _, _, _, o, b in index), default=0)
    if end != len(blob):
        raise CorruptManifestError(f"{path}: payload has {len(blob)} bytes, index covers {end}")

    cfg_cls = KINDS[kind][0]
    config = _build_dataclass(cfg_cls, sections["model"], "model")
    train_cfg = _build_dataclass(TrainConfig, sections["train"], "train") if sections["train"] else None
    weights = OrderedDict((k, v) for k, v in arrays.items() if not k.startswith("adam."))
    optimizer = None
    if sections["adam"]:
        optimizer = _build_dataclass(AdamState, sections["adam"], "adam")
        optimizer.m = [arrays[f"adam.m.{k}"] for k in weights if f"adam.m.{k}" in arrays]
        optimizer.v = [arrays[f"adam.v.{k}"] for k in weights if f"adam.v.{k}" in arrays]
    log = None
    if log_meta or records:
        log = TrainLog(records, int(log_meta.get("best_epoch", -1)), log_meta.get("stop_reason", ""),
                       int(log_meta.get("steps", 0)))
    return Checkpoint(kind, config, weights, optimizer, log, train_cfg, sections["extra"])
