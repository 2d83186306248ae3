"""Minimal parameter container and the building-block layers."""
from __future__ import annotations

from collections import OrderedDict
from typing import Dict, Iterator, List, Tuple

import numpy as np

from ..tensor import Tensor, conv3d, layer_norm, transposed_conv3d
from ..tensor.conv import _triple


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) resampled until every value lies within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def apply_head_prior(head: "Conv3d", prior: float) -> None:
    """Bias the output layer so every voxel starts at foreground probability ``prior``.

    ``prior == 0`` keeps the default fan-in initialization.
    """
    if prior > 0:
        head.bias.data[:] = -np.log((1.0 - prior) / prior)


class Module:
    """Registers :class:`Tensor` parameters and child modules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
            for i, v in enumerate(value):
                self._children[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        out = [(prefix + n, p) for n, p in self._params.items()]
        for cname, child in self._children.items():
            out.extend(child.named_parameters(f"{prefix}{cname}."))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr) -> Tensor:
    return Tensor(arr, requires_grad=True, dtype=arr.dtype)


class Linear(Module):
    """``y = x @ weight + bias`` over the last axis; weight is stored ``[in, out]``."""

    def __init__(self, in_features, out_features, rng, bias=True, dtype=np.float32):
        super().__init__()
        self.weight = _param(trunc_normal(rng, (in_features, out_features), dtype=dtype))
        self.bias = _param(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float32, eps=1e-5):
        super().__init__()
        self.weight = _param(np.ones(dim, dtype=dtype))
        self.bias = _param(np.zeros(dim, dtype=dtype))
        self.eps = eps

    def forward(self, x: Tensor, axis: int = -1) -> Tensor:
        return layer_norm(x, self.weight, self.bias, axis=axis, eps=self.eps)


class Conv3d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, bias=True, dtype=np.float32):
        super().__init__()
        k = _triple(kernel)
        fan_in = in_ch * int(np.prod(k))
        self.weight = _param(fan_in_uniform(rng, (out_ch, in_ch) + k, fan_in, dtype))
        self.bias = _param(fan_in_uniform(rng, (out_ch,), fan_in, dtype)) if bias else None
        self.stride = _triple(stride)
        self.padding = _triple(padding)

    def forward(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose3d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, bias=True, dtype=np.float32):
        super().__init__()
        k = _triple(kernel)
        s = _triple(stride)
        # receptive inputs per output voxel
        fan_in = max(1, in_ch * int(np.prod(k)) // int(np.prod(s)))
        self.weight = _param(fan_in_uniform(rng, (in_ch, out_ch) + k, fan_in, dtype))
        self.bias = _param(fan_in_uniform(rng, (out_ch,), fan_in, dtype)) if bias else None
        self.stride = s

    def forward(self, x: Tensor) -> Tensor:
        return transposed_conv3d(x, self.weight, self.bias, self.stride)
