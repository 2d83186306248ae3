"""3D (shifted) window attention and the Swin transformer block.

Inside the blocks activations are channels-last ``[D, H, W, C]`` so the
layer norms and linear layers act on the trailing axis. The public
partition/shift helpers take channel-first ``[C, D, H, W]`` by default.
"""
from __future__ import annotations

import itertools
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ConfigError, ShapeError
from ..tensor import Tensor, as_tensor, gelu, ops, softmax
from .layers import LayerNorm, Linear, Module, _param, trunc_normal

MASK_VALUE = -1e9


def effective_window(spatial: Sequence[int], window) -> Tuple[int, int, int]:
    """Clamp the window to the feature map: an axis shorter than the window uses its full extent."""
    w = (window,) * 3 if isinstance(window, int) else tuple(window)
    return tuple(min(wi, n) for wi, n in zip(w, spatial))


def effective_shift(spatial: Sequence[int], window) -> Tuple[int, int, int]:
    """Half-window shift, zero on any axis where the (clamped) window spans the whole axis."""
    w = effective_window(spatial, window)
    return tuple(wi // 2 if n > wi else 0 for wi, n in zip(w, spatial))


def _check_divisible(spatial, w):
    if any(n % wi for n, wi in zip(spatial, w)):
        raise ShapeError(f"spatial dims {tuple(spatial)} not divisible by window {tuple(w)}")


def partition_cl(x: Tensor, w) -> Tensor:
    """``[D, H, W, C]`` -> ``[num_windows, wd*wh*ww, C]``."""
    D, H, W, C = x.shape
    _check_divisible((D, H, W), w)
    wd, wh, ww = w
    x = x.reshape(D // wd, wd, H // wh, wh, W // ww, ww, C)
    x = ops.permute(x, (0, 2, 4, 1, 3, 5, 6))
    return x.reshape(-1, wd * wh * ww, C)


def reverse_cl(windows: Tensor, spatial, w) -> Tensor:
    D, H, W = spatial
    wd, wh, ww = w
    C = windows.shape[-1]
    x = windows.reshape(D // wd, H // wh, W // ww, wd, wh, ww, C)
    x = ops.permute(x, (0, 3, 1, 4, 2, 5, 6))
    return x.reshape(D, H, W, C)


def window_partition(x, window, channels_last: bool = False) -> Tensor:
    """Split a feature map into non-overlapping windows of (clamped) extent ``window``."""
    x = as_tensor(x)
    if not channels_last:
        x = ops.permute(x, (1, 2, 3, 0))
    return partition_cl(x, effective_window(x.shape[:3], window))


def window_reverse(windows, shape, window, channels_last: bool = False) -> Tensor:
    """Inverse of :func:`window_partition`; ``shape`` is the original map shape."""
    windows = as_tensor(windows)
    spatial = tuple(shape[:3]) if channels_last else tuple(shape[1:])
    x = reverse_cl(windows, spatial, effective_window(spatial, window))
    return x if channels_last else ops.permute(x, (3, 0, 1, 2))


def cyclic_shift(x, offsets, channels_last: bool = False, reverse: bool = False) -> Tensor:
    """Roll spatial axes by ``-offsets`` (``+offsets`` when ``reverse``)."""
    x = as_tensor(x)
    axes = (0, 1, 2) if channels_last else (1, 2, 3)
    sign = 1 if reverse else -1
    return ops.roll(x, tuple(sign * o for o in offsets), axes)


def region_labels(spatial, window, offsets) -> np.ndarray:
    """Label each voxel of the shifted map by which pre-shift region it came from."""
    labels = np.zeros(tuple(spatial), dtype=np.int64)
    per_axis = []
    for n, w, s in zip(spatial, window, offsets):
        if s == 0:
            per_axis.append([slice(0, n)])
        else:
            per_axis.append([slice(0, n - w), slice(n - w, n - s), slice(n - s, n)])
    for label, sl in enumerate(itertools.product(*per_axis)):
        labels[sl] = label
    return labels


def build_attention_mask(spatial, window, offsets) -> np.ndarray:
    """Additive mask ``[num_windows, N, N]``: 0 within a region, ``MASK_VALUE`` across regions."""
    w = effective_window(spatial, window)
    labels = region_labels(spatial, w, offsets)
    D, H, W = spatial
    wd, wh, ww = w
    lw = labels.reshape(D // wd, wd, H // wh, wh, W // ww, ww).transpose(0, 2, 4, 1, 3, 5)
    lw = lw.reshape(-1, wd * wh * ww)
    diff = lw[:, None, :] != lw[:, :, None]
    return np.where(diff, MASK_VALUE, 0.0)


def relative_position_index(window) -> np.ndarray:
    """Index into a ``(2wd-1)(2wh-1)(2ww-1)`` bias table for each token pair of a window."""
    wd, wh, ww = window
    coords = np.stack(np.meshgrid(np.arange(wd), np.arange(wh), np.arange(ww), indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    rel = rel.transpose(1, 2, 0) + np.array([wd - 1, wh - 1, ww - 1])
    return rel[..., 0] * (2 * wh - 1) * (2 * ww - 1) + rel[..., 1] * (2 * ww - 1) + rel[..., 2]


def window_attention(windows: Tensor, mask: Optional[np.ndarray], heads: int,
                     qkv_weight: Tensor, qkv_bias: Optional[Tensor],
                     proj_weight: Tensor, proj_bias: Optional[Tensor],
                     position_bias: Optional[Tensor] = None,
                     return_weights: bool = False):
    """Multi-head scaled dot-product attention inside each window.

    ``windows`` is ``[B, N, C]``; ``mask`` (``[B, N, N]``) and
    ``position_bias`` (``[heads, N, N]``) are added to the logits before the
    softmax. Returns ``[B, N, C]`` (and the ``[B, heads, N, N]`` weights).
    """
    B, N, C = windows.shape
    if C % heads:
        raise ConfigError(f"channel count {C} is not divisible by {heads} heads")
    dh = C // heads
    qkv = windows @ qkv_weight
    if qkv_bias is not None:
        qkv = qkv + qkv_bias
    qkv = ops.permute(qkv.reshape(B, N, 3, heads, dh), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ ops.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(dh))
    if position_bias is not None:
        logits = logits + position_bias
    if mask is not None:
        logits = logits + Tensor(mask[:, None, :, :].astype(windows.dtype, copy=False))
    attn = softmax(logits, axis=-1)
    out = ops.permute(attn @ v, (0, 2, 1, 3)).reshape(B, N, C)
    out = out @ proj_weight
    if proj_bias is not None:
        out = out + proj_bias
    return (out, attn) if return_weights else out


def global_attention(tokens: Tensor, heads: int, qkv_weight, qkv_bias, proj_weight, proj_bias) -> Tensor:
    """Full attention over every token of ``[N, C]`` (no windows); the efficiency baseline."""
    out = window_attention(tokens.reshape(1, *tokens.shape), None, heads, qkv_weight, qkv_bias,
                           proj_weight, proj_bias)
    return out.reshape(*tokens.shape)


class WindowAttention(Module):
    def __init__(self, dim, heads, window, rng, qkv_bias=True, position_bias=False, dtype=np.float32):
        super().__init__()
        self.heads = heads
        self.window = (window,) * 3 if isinstance(window, int) else tuple(window)
        self.qkv = Linear(dim, 3 * dim, rng, bias=qkv_bias, dtype=dtype)
        self.proj = Linear(dim, dim, rng, dtype=dtype)
        if position_bias:
            size = int(np.prod([2 * w - 1 for w in self.window]))
            self.bias_table = _param(trunc_normal(rng, (size, heads), dtype=dtype))
        else:
            self.bias_table = None
        self._index_cache = {}

    def position_bias(self, w) -> Optional[Tensor]:
        if self.bias_table is None:
            return None
        if w not in self._index_cache:
            full = np.array(self.window)
            # clamped windows index the centre of the full-size table
            idx = relative_position_index(w)
            coords = np.unravel_index(idx, tuple(2 * np.array(w) - 1))
            shifted = [c + (f - wi) for c, f, wi in zip(coords, full, w)]
            self._index_cache[w] = np.ravel_multi_index(shifted, tuple(2 * full - 1))
        idx = self._index_cache[w]
        N = idx.shape[0]
        bias = ops.take(self.bias_table, idx.reshape(-1), axis=0).reshape(N, N, self.heads)
        return ops.permute(bias, (2, 0, 1))

    def forward(self, windows: Tensor, mask=None, w=None, return_weights=False):
        w = tuple(w) if w is not None else self.window
        return window_attention(windows, mask, self.heads, self.qkv.weight, self.qkv.bias,
                                self.proj.weight, self.proj.bias, self.position_bias(w),
                                return_weights=return_weights)


class Mlp(Module):
    def __init__(self, dim, hidden, rng, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class SwinBlock3D(Module):
    """``x + WMSA(LN(x))`` then ``+ MLP(LN(.))``; ``shifted`` enables cyclic shift + mask."""

    def __init__(self, dim, heads, window, rng, shifted=False, mlp_ratio=4, qkv_bias=True,
                 position_bias=False, dtype=np.float32):
        super().__init__()
        self.window = (window,) * 3 if isinstance(window, int) else tuple(window)
        self.shifted = shifted
        self.norm1 = LayerNorm(dim, dtype)
        self.attn = WindowAttention(dim, heads, self.window, rng, qkv_bias, position_bias, dtype)
        self.norm2 = LayerNorm(dim, dtype)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng, dtype)
        self._mask_cache = {}

    def geometry(self, spatial):
        """Effective (window, shift, padded spatial size) for a feature map."""
        w = effective_window(spatial, self.window)
        padded = tuple(-(-n // wi) * wi for n, wi in zip(spatial, w))
        s = effective_shift(padded, w) if self.shifted else (0, 0, 0)
        return w, s, padded

    def attention_mask(self, spatial) -> Optional[np.ndarray]:
        w, s, padded = self.geometry(spatial)
        if not any(s):
            return None
        key = tuple(spatial)
        if key not in self._mask_cache:
            self._mask_cache[key] = build_attention_mask(padded, w, s)
        return self._mask_cache[key]

    def forward(self, x: Tensor, return_weights: bool = False):
        """``x`` is channels-last ``[D, H, W, C]``.

        Maps whose extent is not a multiple of the window are zero-padded at
        the far end after the first norm and cropped after attention.
        """
        spatial = x.shape[:3]
        w, s, padded = self.geometry(spatial)
        h = self.norm1(x)
        if padded != tuple(spatial):
            h = ops.pad(h, [(0, p - n) for p, n in zip(padded, spatial)] + [(0, 0)])
        if any(s):
            h = cyclic_shift(h, s, channels_last=True)
        out = self.attn(partition_cl(h, w), self.attention_mask(spatial), w, return_weights=return_weights)
        h, weights = out if return_weights else (out, None)
        h = reverse_cl(h, padded, w)
        if any(s):
            h = cyclic_shift(h, s, channels_last=True, reverse=True)
        if padded != tuple(spatial):
            h = h[:spatial[0], :spatial[1], :spatial[2]]
        x = x + h
        x = x + self.mlp(self.norm2(x))
        return (x, weights) if return_weights else x


class SwinStage(Module):
    """``depth`` blocks; every second block uses shifted windows."""

    def __init__(self, dim, heads, window, depth, rng, mlp_ratio=4, qkv_bias=True,
                 position_bias=False, shift=True, dtype=np.float32):
        super().__init__()
        self.blocks = [
            SwinBlock3D(dim, heads, window, rng, shifted=shift and bool(i % 2), mlp_ratio=mlp_ratio,
                        qkv_bias=qkv_bias, position_bias=position_bias, dtype=dtype)
            for i in range(depth)
        ]

    def forward(self, x: Tensor) -> Tensor:
        """Channel-first in and out; blocks run channels-last."""
        h = ops.permute(x, (1, 2, 3, 0))
        for block in self.blocks:
            h = block(h)
        return ops.permute(h, (3, 0, 1, 2))
