import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinseg3d.errors import ConfigError, ShapeError
from swinseg3d.model import (MASK_VALUE, Conv3d, Downsample, ModelConfig, PatchEmbed, SwinBlock3D,
                             SwinStage, SwinUNet3D, UNet3D, UNetConfig, Upsample,
                             build_attention_mask, cyclic_shift, effective_shift,
                             effective_window, global_attention, miniature_config, param_count,
                             reference_config, skip_fuse, window_attention, window_partition,
                             window_reverse)
from swinseg3d.tensor import Tensor, backward, no_grad
from swinseg3d.tensor.gradcheck import max_rel_error


def f64(rng, *shape, requires_grad=False):
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad, dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def attention_oracle(x, heads, wqkv, bqkv, wp, bp, bias=None):
    """Plain-loop multi-head attention over rows of ``x`` [N, C]."""
    N, C = x.shape
    dh = C // heads
    qkv = x @ wqkv + bqkv
    q, k, v = qkv[:, :C], qkv[:, C:2 * C], qkv[:, 2 * C:]
    out = np.zeros_like(x)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        if bias is not None:
            s = s + bias
        s = np.exp(s - s.max(axis=1, keepdims=True))
        s /= s.sum(axis=1, keepdims=True)
        out[:, sl] = s @ v[:, sl]
    return out @ wp + bp


def attn_weights(rng, C):
    return (rng.standard_normal((C, 3 * C)) * 0.3, rng.standard_normal(3 * C) * 0.1,
            rng.standard_normal((C, C)) * 0.3, rng.standard_normal(C) * 0.1)


# ------------------------------------------------------------ patch embed
def test_patch_embed_shape():
    pe = PatchEmbed(2, 32, (4, 4, 4), np.random.default_rng(0))
    assert pe(Tensor(np.zeros((2, 16, 64, 64)))).shape == (32, 4, 16, 16)


def test_patch_embed_constant_input_averaging_kernel():
    pe = PatchEmbed(2, 4, (4, 4, 4), np.random.default_rng(0))
    pe.proj.weight.data[:] = 1.0 / (2 * 64)
    pe.proj.bias.data[:] = 0.0
    out = pe(Tensor(np.full((2, 16, 16, 16), 3.0)))
    np.testing.assert_allclose(out.data, 3.0, rtol=1e-6)


def test_patch_embed_scales_with_input():
    pe = PatchEmbed(2, 8, (4, 4, 4), np.random.default_rng(0))
    small = pe(Tensor(np.zeros((2, 16, 32, 32)))).shape
    big = pe(Tensor(np.zeros((2, 16, 64, 64)))).shape
    assert big[2:] == tuple(2 * n for n in small[2:])


def test_patch_embed_rejects_indivisible():
    pe = PatchEmbed(2, 8, (4, 4, 4), np.random.default_rng(0))
    with pytest.raises(ShapeError, match="divisible"):
        pe(Tensor(np.zeros((2, 16, 30, 32))))


# ------------------------------------------------------ partition / shift
def test_partition_counts():
    w = window_partition(np.zeros((8, 4, 4, 4)), 2)
    assert w.shape == (8, 8, 8)


def test_partition_full_extent_is_one_window():
    assert window_partition(np.zeros((8, 2, 4, 4)), (2, 4, 4)).shape == (1, 32, 8)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2, 4]), st.sampled_from([2, 4, 8]), st.sampled_from([2, 4, 8]),
       st.sampled_from([1, 2, 3]))
def test_partition_reverse_roundtrip(d, h, w, win):
    x = np.random.default_rng(d * 100 + h * 10 + w).standard_normal((3, d, h, w))
    wdw = effective_window((d, h, w), win)
    if any(n % k for n, k in zip((d, h, w), wdw)):
        return
    back = window_reverse(window_partition(x, win), x.shape, win)
    np.testing.assert_array_equal(back.data, x)


def test_partition_preserves_window_content():
    x = np.arange(2 * 4 * 4 * 4, dtype=float).reshape(2, 4, 4, 4)
    w = window_partition(x, 2).data
    # second window along W holds voxels [0:2, 0:2, 2:4]
    expected = x[:, 0:2, 0:2, 2:4].reshape(2, -1).T
    np.testing.assert_array_equal(w[1], expected)


def test_shift_zero_is_identity_and_unmasked():
    x = np.random.default_rng(0).standard_normal((3, 4, 4, 4))
    np.testing.assert_array_equal(cyclic_shift(x, (0, 0, 0)).data, x)
    assert not build_attention_mask((4, 4, 4), 2, (0, 0, 0)).any()


def test_shift_unshift_roundtrip(rng):
    x = rng.standard_normal((3, 4, 6, 8))
    back = cyclic_shift(cyclic_shift(x, (1, 2, 3)), (1, 2, 3), reverse=True)
    np.testing.assert_array_equal(back.data, x)


def test_shift_moves_origin_to_end():
    x = np.zeros((1, 4, 4, 4))
    x[0, 0, 0, 0] = 1.0
    out = cyclic_shift(x, (1, 1, 1)).data
    assert out[0, 3, 3, 3] == 1.0


def _wrap_oracle(spatial, window, shift):
    """Masked iff the pair disagrees on wrap status along some axis."""
    D, H, W = spatial
    coords = list(itertools.product(range(D), range(H), range(W)))
    wrapped = {c: tuple(p >= n - s if s else False for p, n, s in zip(c, spatial, shift)) for c in coords}
    windows = {}
    for c in coords:
        key = tuple(p // w for p, w in zip(c, window))
        windows.setdefault(key, []).append(c)
    out = []
    for key in sorted(windows):
        toks = sorted(windows[key])
        out.append([[wrapped[a] != wrapped[b] for b in toks] for a in toks])
    return np.array(out)


@pytest.mark.parametrize("spatial,window,shift", [
    ((4, 4, 4), (2, 2, 2), (1, 1, 1)),
    ((2, 6, 4), (2, 2, 2), (0, 1, 1)),
    ((4, 8, 8), (2, 4, 4), (1, 2, 2)),
])
def test_mask_matches_wrap_oracle(spatial, window, shift):
    mask = build_attention_mask(spatial, window, shift)
    np.testing.assert_array_equal(mask == MASK_VALUE, _wrap_oracle(spatial, window, shift))
    assert set(np.unique(mask)) <= {0.0, MASK_VALUE}


def test_mask_only_boundary_windows_masked():
    mask = build_attention_mask((4, 4, 4), 2, (1, 1, 1))
    masked_windows = {i for i in range(mask.shape[0]) if (mask[i] != 0).any()}
    # only the last window along some axis straddles the wrap seam
    assert 0 not in masked_windows
    assert len(masked_windows) == 7


def test_clamping_rule():
    assert effective_window((1, 4, 4), 2) == (1, 2, 2)
    assert effective_shift((1, 4, 4), 2) == (0, 1, 1)
    assert effective_window((2, 2, 2), 4) == (2, 2, 2)
    assert effective_shift((2, 2, 2), 4) == (0, 0, 0)


# -------------------------------------------------------------- attention
def test_window_attention_equals_global_oracle(rng):
    C, heads = 8, 2
    x = rng.standard_normal((C, 2, 4, 4))
    wq, bq, wp, bp = attn_weights(rng, C)
    windows = window_partition(Tensor(x, dtype=np.float64), (2, 4, 4))
    out = window_attention(windows, None, heads, Tensor(wq), Tensor(bq), Tensor(wp), Tensor(bp))
    tokens = x.reshape(C, -1).T
    expected = attention_oracle(tokens, heads, wq, bq, wp, bp)
    np.testing.assert_allclose(out.data[0], expected, atol=1e-5)
    glob = global_attention(Tensor(tokens), heads, Tensor(wq), Tensor(bq), Tensor(wp), Tensor(bp))
    np.testing.assert_allclose(glob.data, expected, atol=1e-5)


def test_windowed_equals_per_window_oracle(rng):
    C = 4
    x = rng.standard_normal((C, 4, 4, 4))
    wq, bq, wp, bp = attn_weights(rng, C)
    win = window_partition(Tensor(x, dtype=np.float64), 2)
    out = window_attention(win, None, 1, Tensor(wq), Tensor(bq), Tensor(wp), Tensor(bp))
    for i in range(win.shape[0]):
        np.testing.assert_allclose(out.data[i], attention_oracle(win.data[i], 1, wq, bq, wp, bp), atol=1e-5)


def test_single_token_windows_reduce_to_value_projection(rng):
    C = 6
    x = rng.standard_normal((5, 1, C))
    wq, bq, wp, bp = attn_weights(rng, C)
    out = window_attention(Tensor(x), None, 2, Tensor(wq), Tensor(bq), Tensor(wp), Tensor(bp))
    v = x[:, 0] @ wq[:, 2 * C:] + bq[2 * C:]
    np.testing.assert_allclose(out.data[:, 0], v @ wp + bp, atol=1e-10)


def test_fully_masked_window_attends_to_self(rng):
    C, N = 4, 5
    x = rng.standard_normal((1, N, C))
    mask = np.full((1, N, N), MASK_VALUE)
    np.fill_diagonal(mask[0], 0.0)
    wq, bq, wp, bp = attn_weights(rng, C)
    _, weights = window_attention(Tensor(x), mask, 2, Tensor(wq), Tensor(bq), Tensor(wp), Tensor(bp),
                                  return_weights=True)
    for h in range(2):
        np.testing.assert_allclose(weights.data[0, h], np.eye(N), atol=1e-12)


def test_shifted_block_blocks_cross_region_attention(rng):
    block = SwinBlock3D(8, 2, 2, np.random.default_rng(0), shifted=True, dtype=np.float64)
    x = Tensor(rng.standard_normal((4, 4, 4, 8)), dtype=np.float64)
    _, weights = block(x, return_weights=True)
    masked = _wrap_oracle((4, 4, 4), (2, 2, 2), (1, 1, 1))
    assert masked.any()
    assert weights.data.transpose(1, 0, 2, 3)[:, masked].max() < 1e-6


def test_heads_must_divide_channels(rng):
    wq, bq, wp, bp = attn_weights(rng, 6)
    with pytest.raises(ConfigError):
        window_attention(Tensor(rng.standard_normal((1, 2, 6))), None, 4, Tensor(wq), Tensor(bq),
                         Tensor(wp), Tensor(bp))


# ------------------------------------------------------------- swin block
def _zero_outputs(block):
    for p in (block.attn.proj.weight, block.attn.proj.bias, block.mlp.fc2.weight, block.mlp.fc2.bias):
        p.data[:] = 0.0


@pytest.mark.parametrize("shifted", [False, True])
def test_swin_block_identity_with_zero_projections(rng, shifted):
    block = SwinBlock3D(8, 2, 2, np.random.default_rng(0), shifted=shifted)
    _zero_outputs(block)
    x = rng.standard_normal((2, 4, 4, 8)).astype(np.float32)
    np.testing.assert_array_equal(block(Tensor(x)).data, x)


@pytest.mark.parametrize("shifted", [False, True])
def test_swin_block_gradcheck(rng, shifted):
    block = SwinBlock3D(8, 2, 2, np.random.default_rng(1), shifted=shifted, dtype=np.float64)
    stage_x = f64(rng, 8, 2, 4, 4, requires_grad=True)

    def fn():
        h = stage_x.permute((1, 2, 3, 0))
        return block(h).mean()

    assert max_rel_error(fn, [stage_x] + block.parameters(), probes=10) <= 1e-3


def test_swin_block_pads_odd_maps(rng):
    block = SwinBlock3D(8, 2, 2, np.random.default_rng(0), shifted=True, dtype=np.float64)
    x = f64(rng, 3, 5, 5, 8, requires_grad=True)
    assert block(x).shape == (3, 5, 5, 8)
    assert max_rel_error(lambda: block(x).mean(), [x], probes=10) <= 1e-3


def test_swin_stage_alternates_shift():
    stage = SwinStage(8, 1, 2, 4, np.random.default_rng(0))
    assert [b.shifted for b in stage.blocks] == [False, True, False, True]
    stage = SwinStage(8, 1, 2, 2, np.random.default_rng(0), shift=False)
    assert not any(b.shifted for b in stage.blocks)


def test_relative_position_bias_option(rng):
    block = SwinBlock3D(8, 2, 2, np.random.default_rng(0), position_bias=True, dtype=np.float64)
    assert block.attn.bias_table.shape == (27, 2)
    block.attn.bias_table.data[:] = rng.standard_normal((27, 2))
    x = f64(rng, 2, 4, 4, 8, requires_grad=True)
    assert max_rel_error(lambda: block(x).mean(), [x, block.attn.bias_table], probes=10) <= 1e-3


# ----------------------------------------------------- down / up / fusion
def test_downsample_shape():
    assert Downsample(32, np.random.default_rng(0))(Tensor(np.zeros((32, 4, 16, 16)))).shape == (64, 2, 8, 8)


def test_downsample_averaging_kernel_on_constant():
    d = Downsample(2, np.random.default_rng(0))
    d.conv.weight.data[:] = 1.0 / 16
    d.conv.bias.data[:] = 0.0
    np.testing.assert_allclose(d(Tensor(np.full((2, 4, 4, 4), 5.0))).data, 5.0, rtol=1e-6)


def test_downsample_rejects_odd():
    with pytest.raises(ShapeError):
        Downsample(4, np.random.default_rng(0))(Tensor(np.zeros((4, 3, 4, 4))))


@pytest.mark.parametrize("mode", ["transposed_conv", "trilinear"])
def test_upsample_shape(mode):
    up = Upsample(128, np.random.default_rng(0), mode)
    assert up(Tensor(np.zeros((128, 1, 4, 4)))).shape == (64, 2, 8, 8)


def test_skip_fuse_identity_projection(rng):
    C = 4
    dec, enc = rng.standard_normal((C, 2, 2, 2)), rng.standard_normal((C, 2, 2, 2))
    w = np.concatenate([np.eye(C), np.zeros((C, C))], axis=1)[..., None, None, None]
    out = skip_fuse(Tensor(dec), Tensor(enc), Tensor(w))
    np.testing.assert_allclose(out.data, dec, atol=1e-12)


def test_skip_fuse_gradient_reaches_both_inputs(rng):
    C = 3
    dec, enc = f64(rng, C, 2, 2, 2, requires_grad=True), f64(rng, C, 2, 2, 2, requires_grad=True)
    w = f64(rng, C, 2 * C, 1, 1, 1, requires_grad=True)
    backward(skip_fuse(dec, enc, w).sum())
    assert np.abs(dec.grad).sum() > 0 and np.abs(enc.grad).sum() > 0
    assert max_rel_error(lambda: (skip_fuse(dec, enc, w) * skip_fuse(dec, enc, w)).sum(), [dec, enc, w]) <= 1e-4


def test_skip_fuse_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        skip_fuse(Tensor(np.zeros((4, 2, 2, 2))), Tensor(np.zeros((4, 2, 2, 4))), Tensor(np.zeros((4, 8, 1, 1, 1))))


# -------------------------------------------------------- full network
def test_miniature_forward_shapes():
    model = SwinUNet3D(miniature_config())
    with no_grad():
        logits, stages = model(np.zeros((2, 16, 64, 64), np.float32), return_stages=True)
    assert logits.shape == (1, 16, 64, 64)
    assert stages["embed"] == (8, 4, 16, 16)
    assert stages["enc2"] == (16, 2, 8, 8)
    assert stages["bottleneck"] == (32, 1, 4, 4)
    assert stages["dec2"] == (8, 4, 16, 16)


def test_reference_forward_full_resolution():
    model = SwinUNet3D(reference_config())
    with no_grad():
        logits = model(np.zeros((2, 16, 400, 400), np.float32))
    assert logits.shape == (1, 16, 400, 400)
    assert np.isfinite(logits.data).all()


def test_forward_rejects_bad_input():
    model = SwinUNet3D(miniature_config())
    with pytest.raises(ShapeError):
        model(np.zeros((2, 16, 40, 64), np.float32))
    with pytest.raises(ShapeError):
        model(np.zeros((3, 16, 64, 64), np.float32))


def test_forward_deterministic_given_seed(rng):
    x = rng.random((2, 16, 32, 32)).astype(np.float32)
    with no_grad():
        a = SwinUNet3D(miniature_config(seed=3))(x).data
        b = SwinUNet3D(miniature_config(seed=3))(x).data
        c = SwinUNet3D(miniature_config(seed=4))(x).data
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_miniature_end_to_end_gradcheck(rng):
    model = SwinUNet3D(miniature_config(dtype="float64"))
    x = f64(rng, 2, 16, 16, 16, requires_grad=True)
    weight = rng.standard_normal((1, 16, 16, 16))
    fn = lambda: (model(x) * weight).sum()  # noqa: E731
    # step 1e-5: the summed output is O(10), so h=1e-6 loses digits to cancellation
    assert max_rel_error(fn, [x] + model.parameters(), probes=2, h=1e-5, seed=1) <= 1e-3


def test_translation_equivariance_unshifted():
    cfg = miniature_config(shifted_windows=False, dtype="float64")
    model = SwinUNet3D(cfg)
    rng = np.random.default_rng(0)
    x = np.zeros((2, 16, 96, 96))
    x[:, :, :64, :64] = rng.random((2, 16, 64, 64))
    moved = np.roll(x, (32, 32), axis=(2, 3))
    with no_grad():
        a = model(x).data
        b = model(moved).data
    np.testing.assert_allclose(a[:, :, :64, :64], b[:, :, 32:, 32:], atol=1e-10)


def test_trilinear_variant_runs():
    model = SwinUNet3D(miniature_config(upsample_mode="trilinear"))
    with no_grad():
        assert model(np.zeros((2, 16, 32, 32), np.float32)).shape == (1, 16, 32, 32)


# ------------------------------------------------------------ param count
def test_param_count_pointwise_conv():
    conv = Conv3d(2, 1, 1, np.random.default_rng(0))
    assert conv.num_parameters() == 3


def test_param_count_closed_form_miniature():
    cfg = miniature_config()
    c1, c2, c3 = cfg.stage_dims

    def stage(c):
        block = 2 * (2 * c) + (c * 3 * c + 3 * c) + (c * c + c) + (c * 4 * c + 4 * c) + (4 * c * c + c)
        return cfg.blocks_per_stage * block

    expected = (2 * 64 * c1 + c1 + stage(c1) + c1 * 8 * c2 + c2 + stage(c2) + c2 * 8 * c3 + c3
                + stage(c3) + c3 * 8 * c2 + c2 + 2 * c2 * c2 + c2 + stage(c2) + c2 * 8 * c1 + c1
                + 2 * c1 * c1 + c1 + stage(c1) + c1 * 64 * c1 + c1 + c1 + 1)
    assert param_count(cfg) == expected == 58137


def test_param_count_input_independent():
    model = SwinUNet3D(miniature_config())
    before = model.num_parameters()
    with no_grad():
        model(np.zeros((2, 16, 32, 32), np.float32))
        model(np.zeros((2, 32, 16, 48), np.float32))
    assert model.num_parameters() == before


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(base_dim=7)
    with pytest.raises(ConfigError):
        ModelConfig(heads_per_stage=(3, 3, 3))
    with pytest.raises(ConfigError):
        ModelConfig(upsample_mode="nearest")
    assert ModelConfig.from_dict(reference_config().to_dict()) == reference_config()


# ------------------------------------------------------------------ U-Net
def test_unet_shape_and_determinism(rng):
    x = rng.random((2, 16, 32, 32)).astype(np.float32)
    with no_grad():
        a = UNet3D(UNetConfig(seed=1))(x)
        b = UNet3D(UNetConfig(seed=1))(x)
    assert a.shape == (1, 16, 32, 32)
    np.testing.assert_array_equal(a.data, b.data)


def test_unet_gradcheck(rng):
    model = UNet3D(UNetConfig(base_channels=2, dtype="float64"))
    x = f64(rng, 2, 8, 8, 8, requires_grad=True)
    assert max_rel_error(lambda: (model(x) * model(x)).mean(), [x] + model.parameters(), probes=2) <= 1e-3
