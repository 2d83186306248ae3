"""3D convolution family on channel-first ``[C, D, H, W]`` tensors.

The kernels loop over kernel offsets and do one matrix product per offset,
which keeps memory at the size of the input instead of a full im2col buffer.
When kernel == stride and there is no padding (patch embedding, 2x down/up
sampling) a reshape-only fast path is used instead.
"""
from __future__ import annotations

import itertools

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_result


def _triple(v) -> tuple:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(i) for i in v)
    if len(v) != 3:
        raise ValueError(f"expected 3 values, got {v}")
    return v


def conv_output_shape(spatial, kernel, stride, padding) -> tuple:
    k, s, p = _triple(kernel), _triple(stride), _triple(padding)
    return tuple((n + 2 * pi - ki) // si + 1 for n, ki, si, pi in zip(spatial, k, s, p))


def _is_patchwise(spatial, k, s, p) -> bool:
    return k == s and p == (0, 0, 0) and all(n % ki == 0 for n, ki in zip(spatial, k))


def _pad(x: np.ndarray, p) -> np.ndarray:
    if p == (0, 0, 0):
        return x
    return np.pad(x, ((0, 0), (p[0], p[0]), (p[1], p[1]), (p[2], p[2])))


def _window(arr, offset, s, out_sp):
    i, j, k = offset
    return arr[:, i:i + s[0] * out_sp[0]:s[0], j:j + s[1] * out_sp[1]:s[1], k:k + s[2] * out_sp[2]:s[2]]


def _blocks(x: np.ndarray, k) -> np.ndarray:
    """``[C, D, H, W]`` -> ``[D'H'W', C*kd*kh*kw]`` for non-overlapping blocks."""
    C, D, H, W = x.shape
    kd, kh, kw = k
    xr = x.reshape(C, D // kd, kd, H // kh, kh, W // kw, kw)
    return xr.transpose(1, 3, 5, 0, 2, 4, 6).reshape(-1, C * kd * kh * kw)


def _unblocks(cols: np.ndarray, C, out_sp, k) -> np.ndarray:
    """Inverse of :func:`_blocks`; ``cols`` is ``[C*kd*kh*kw, D'H'W']``."""
    Do, Ho, Wo = out_sp
    kd, kh, kw = k
    r = cols.reshape(C, kd, kh, kw, Do, Ho, Wo).transpose(0, 4, 1, 5, 2, 6, 3)
    return r.reshape(C, Do * kd, Ho * kh, Wo * kw)


def conv_forward(x: np.ndarray, w: np.ndarray, stride, padding) -> np.ndarray:
    s, p = _triple(stride), _triple(padding)
    O, C = w.shape[:2]
    k = w.shape[2:]
    spatial = x.shape[1:]
    out_sp = conv_output_shape(spatial, k, s, p)
    if _is_patchwise(spatial, k, s, p):
        y = w.reshape(O, -1) @ _blocks(x, k).T
        return y.reshape((O,) + out_sp)
    xp = _pad(x, p)
    # offset-major contiguous copy so each per-offset matrix hits BLAS
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 0, 1))
    y = np.zeros((O, int(np.prod(out_sp))), dtype=x.dtype)
    for off in itertools.product(*(range(n) for n in k)):
        xs = _window(xp, off, s, out_sp).reshape(C, -1)
        y += wt[off] @ xs
    return y.reshape((O,) + out_sp)


def conv_input_grad(gy: np.ndarray, w: np.ndarray, stride, padding, in_spatial) -> np.ndarray:
    """Adjoint of :func:`conv_forward` with respect to its input."""
    s, p = _triple(stride), _triple(padding)
    O, C = w.shape[:2]
    k = w.shape[2:]
    in_spatial = tuple(in_spatial)
    out_sp = gy.shape[1:]
    g2 = gy.reshape(O, -1)
    if _is_patchwise(in_spatial, k, s, p):
        cols = w.reshape(O, -1).T @ g2
        return np.ascontiguousarray(_unblocks(cols, C, out_sp, k))
    padded = tuple(n + 2 * pi for n, pi in zip(in_spatial, p))
    gxp = np.zeros((C,) + padded, dtype=gy.dtype)
    wt = np.ascontiguousarray(w.transpose(2, 3, 4, 1, 0))
    for off in itertools.product(*(range(n) for n in k)):
        contrib = wt[off] @ g2
        _window(gxp, off, s, out_sp)[...] += contrib.reshape((C,) + out_sp)
    return np.ascontiguousarray(
        gxp[:, p[0]:p[0] + in_spatial[0], p[1]:p[1] + in_spatial[1], p[2]:p[2] + in_spatial[2]]
    )


def conv_weight_grad(gy: np.ndarray, x: np.ndarray, stride, padding, kernel) -> np.ndarray:
    s, p = _triple(stride), _triple(padding)
    k = _triple(kernel)
    O = gy.shape[0]
    C = x.shape[0]
    out_sp = gy.shape[1:]
    g2 = gy.reshape(O, -1)
    if _is_patchwise(x.shape[1:], k, s, p):
        return (g2 @ _blocks(x, k)).reshape((O, C) + k)
    xp = _pad(x, p)
    gw = np.zeros((O, C) + k, dtype=gy.dtype)
    for off in itertools.product(*(range(n) for n in k)):
        xs = _window(xp, off, s, out_sp).reshape(C, -1)
        gw[(slice(None), slice(None)) + off] = g2 @ xs.T
    return gw


def _check_conv(x: Tensor, kernel: Tensor, p):
    if x.ndim != 4:
        raise ShapeError(f"conv3d expects input [C, D, H, W], got shape {x.shape}")
    if kernel.ndim != 5:
        raise ShapeError(f"conv3d expects kernel [C_out, C_in, kd, kh, kw], got shape {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise ShapeError(f"conv3d channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    for n, kk, pp in zip(x.shape[1:], kernel.shape[2:], p):
        if n + 2 * pp < kk:
            raise ShapeError(
                f"conv3d kernel {kernel.shape[2:]} larger than padded input {x.shape[1:]} (padding {p})"
            )


def conv3d(x, kernel, bias=None, stride=1, padding=0) -> Tensor:
    """Cross-correlation ``[C_in, D, H, W] * [C_out, C_in, kd, kh, kw] -> [C_out, D', H', W']``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    s, p = _triple(stride), _triple(padding)
    _check_conv(x, kernel, p)
    y = conv_forward(x.data, kernel.data, s, p)
    if bias is not None:
        y = y + bias.data.reshape(-1, 1, 1, 1)

    def bw(g):
        gx = conv_input_grad(g, kernel.data, s, p, x.shape[1:]) if x.requires_grad else None
        gk = conv_weight_grad(g, x.data, s, p, kernel.shape[2:]) if kernel.requires_grad else None
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)) if bias.requires_grad else None)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(y, parents, bw)


def transposed_conv3d(x, kernel, bias=None, stride=1, padding=0) -> Tensor:
    """Adjoint of :func:`conv3d` for the same geometry.

    ``kernel`` is ``[C_in, C_out, kd, kh, kw]`` (the conv kernel that maps
    ``C_out -> C_in``), and each output extent is ``(n - 1) * stride + k - 2 * padding``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    s, p = _triple(stride), _triple(padding)
    if min(s) < 1:
        raise ValueError(f"stride must be >= 1, got {s}")
    if x.ndim != 4 or kernel.ndim != 5 or kernel.shape[0] != x.shape[0]:
        raise ShapeError(f"transposed_conv3d shape mismatch: input {x.shape} vs kernel {kernel.shape}")
    k = kernel.shape[2:]
    out_sp = tuple((n - 1) * si + ki - 2 * pi for n, si, ki, pi in zip(x.shape[1:], s, k, p))
    if min(out_sp) < 1:
        raise ShapeError(f"transposed_conv3d output would be empty: {out_sp}")
    y = conv_input_grad(x.data, kernel.data, s, p, out_sp)
    if bias is not None:
        y = y + bias.data.reshape(-1, 1, 1, 1)

    def bw(g):
        gx = conv_forward(g, kernel.data, s, p) if x.requires_grad else None
        gk = conv_weight_grad(x.data, g, s, p, k) if kernel.requires_grad else None
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)) if bias.requires_grad else None)
        return grads

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_result(y, parents, bw)


def _interp_matrix(n: int, factor: int, dtype) -> np.ndarray:
    """Linear interpolation weights (half-pixel centres, edge clamped), shape ``[n*factor, n]``."""
    m = np.zeros((n * factor, n), dtype=dtype)
    src = (np.arange(n * factor) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    lam = src - i0
    rows = np.arange(n * factor)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m


def trilinear_upsample(x, factor=2) -> Tensor:
    """Separable trilinear interpolation of ``[C, D, H, W]`` by an integer factor per axis."""
    x = as_tensor(x)
    f = _triple(factor)
    if min(f) < 1:
        raise ValueError(f"upsample factor must be >= 1, got {f}")
    mats = [_interp_matrix(n, fi, x.dtype) for n, fi in zip(x.shape[1:], f)]

    def apply(arr, transpose=False):
        for axis, m in enumerate(mats, start=1):
            m = m.T if transpose else m
            arr = np.moveaxis(np.tensordot(m, arr, axes=(1, axis)), 0, axis)
        return np.ascontiguousarray(arr)

    return make_result(apply(x.data), (x,), lambda g: (apply(g, transpose=True),))


def max_pool3d(x, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; gradient is routed to the first maximum in each block."""
    x = as_tensor(x)
    C, D, H, W = x.shape
    if D % size or H % size or W % size:
        raise ShapeError(f"max_pool3d needs spatial dims divisible by {size}, got {x.shape}")
    sp = (D // size, H // size, W // size)
    blocks = x.data.reshape(C, sp[0], size, sp[1], size, sp[2], size)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4, 6).reshape(C, *sp, size ** 3)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = gb.reshape(C, *sp, size, size, size).transpose(0, 1, 4, 2, 5, 3, 6)
        return (np.ascontiguousarray(gb.reshape(C, D, H, W)),)

    return make_result(np.ascontiguousarray(out), (x,), bw)
