import numpy as np
import pytest

from fatlic.attention import (
    FDWA,
    KINDS,
    WindowSpec,
    scaled_attention,
    shift,
    unshift,
    window_attention,
    window_merge,
    window_partition,
)
from fatlic.tensor import ConfigurationError, DimensionError, Tensor

from gradcheck import check, leaf


def _x(shape, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=shape), dtype=np.float64)


def test_window_shapes_follow_base_size():
    assert WindowSpec(4, "LL").extents == (16, 16)
    assert WindowSpec(4, "HH").extents == (4, 4)
    assert WindowSpec(4, "HL").extents == (4, 16)
    assert WindowSpec(4, "LH").extents == (16, 4)
    with pytest.raises(ConfigurationError):
        WindowSpec(4, "XX")


def test_partition_examples():
    x = _x((1, 3, 16, 16))
    assert window_partition(x, 16, 4).shape == (4, 3, 16, 4)
    whole = window_partition(x, 16, 16)
    assert whole.shape == (1, 3, 16, 16)
    np.testing.assert_array_equal(whole.data[0], x.data[0])
    with pytest.raises(DimensionError):
        window_partition(_x((1, 3, 10, 16)), 4, 4)


@pytest.mark.parametrize("kind", KINDS)
def test_partition_merge_inverse(kind):
    x = _x((2, 3, 32, 48), seed=KINDS.index(kind))
    wh, ww = WindowSpec(4, kind).extents
    windows = window_partition(x, wh, ww)
    assert windows.shape[0] == 2 * (32 // wh) * (48 // ww)
    np.testing.assert_array_equal(window_merge(windows, 32, 48, batch=2).data, x.data)


def test_partition_is_row_major():
    x = Tensor(np.arange(64, dtype=np.float64).reshape(1, 1, 8, 8))
    w = window_partition(x, 4, 4).data
    assert [w[k, 0, 0, 0] for k in range(4)] == [0, 4, 32, 36]


def test_shift_amounts_and_inverse():
    assert WindowSpec(4, "HH", True).shift == (2, 2)
    assert WindowSpec(4, "LH", True).shift == (8, 2)
    x = np.arange(16 * 16, dtype=np.float64).reshape(1, 1, 16, 16)
    moved = shift(Tensor(x), WindowSpec(4, "LH", True)).data
    assert moved[0, 0, 0, 0] == x[0, 0, 8, 2]
    for kind in KINDS:
        spec = WindowSpec(4, kind, True)
        y = _x((1, 2, 32, 32), seed=5)
        np.testing.assert_array_equal(unshift(shift(y, spec), spec).data, y.data)


def _proj(rng, heads, c, d):
    return Tensor(rng.normal(size=(heads, c, d)), dtype=np.float64)


def test_identical_windows_give_identical_outputs():
    rng = np.random.default_rng(1)
    one = rng.normal(size=(1, 6, 3))
    tokens = Tensor(np.concatenate([one, one, rng.normal(size=(1, 6, 3))]), dtype=np.float64)
    wq, wk, wv = (_proj(rng, 2, 3, 4) for _ in range(3))
    out = window_attention(tokens, wq, wk, wv).data
    np.testing.assert_array_equal(out[0], out[1])
    assert not np.allclose(out[0], out[2])


def test_single_token_returns_value_projection():
    rng = np.random.default_rng(2)
    tokens = _x((5, 1, 3), seed=3)
    wq, wk, wv = (_proj(rng, 2, 3, 4) for _ in range(3))
    out = window_attention(tokens, wq, wk, wv).data
    expected = np.einsum("bc,hcd->bhd", tokens.data[:, 0], wv.data)
    np.testing.assert_allclose(out[:, :, 0], expected, rtol=1e-12)


def test_two_token_hand_calculation():
    # q = k = v = token, d = 2: logits = x_i . x_j / sqrt(2)
    tokens = np.array([[[1.0, 0.0], [1.0, 1.0]]])
    eye = Tensor(np.eye(2)[None])
    out = window_attention(Tensor(tokens), eye, eye, eye).data[0, 0]
    l00, l01, l11 = 1 / np.sqrt(2), 1 / np.sqrt(2), 2 / np.sqrt(2)
    a0 = np.exp([l00, l01]) / np.exp([l00, l01]).sum()
    a1 = np.exp([l01, l11]) / np.exp([l01, l11]).sum()
    np.testing.assert_allclose(out[0], a0 @ tokens[0], rtol=1e-14)
    np.testing.assert_allclose(out[1], a1 @ tokens[0], rtol=1e-14)


def test_window_attention_rejects_bad_projection():
    with pytest.raises(ConfigurationError):
        window_attention(_x((1, 4, 3)), _proj(np.random.default_rng(0), 2, 5, 4),
                         *(_proj(np.random.default_rng(0), 2, 5, 4),) * 2)
    with pytest.raises(ConfigurationError):
        window_attention(_x((1, 4, 3)), _proj(np.random.default_rng(0), 2, 3, 4),
                         _proj(np.random.default_rng(0), 2, 3, 5), _proj(np.random.default_rng(0), 2, 3, 4))


def test_head_grouping_and_head_count_contract():
    attn = FDWA(64, 32, 4, np.random.default_rng(0))
    assert attn.heads // 4 == 8
    assert attn.group_channels("HL") == slice(32, 48)
    with pytest.raises(ConfigurationError):
        FDWA(16, 6, 4, np.random.default_rng(0))


def _uniform_fdwa(C, K, s):
    attn = FDWA(C, K, s, np.random.default_rng(0), position_bias=False, dtype=np.float64)
    qkv = np.zeros((3 * C, C))
    qkv[2 * C:] = np.eye(C)
    attn.qkv.data[:] = qkv
    attn.proj.data[:] = np.eye(C)
    return attn


@pytest.mark.parametrize("shifted", [False, True])
def test_uniform_attention_gives_window_means(shifted):
    C, K, s = 8, 4, 2
    attn = _uniform_fdwa(C, K, s)
    attn.shifted = shifted
    attn.specs = [WindowSpec(s, kind, shifted) for kind in KINDS]
    x = _x((1, C, 16, 16), seed=7).data
    out = attn(Tensor(x)).data
    per_group = C // 4
    for g, spec in enumerate(attn.specs):
        wh, ww = spec.extents
        part = x[:, g * per_group:(g + 1) * per_group]
        if shifted:
            part = np.roll(part, (-spec.shift[0], -spec.shift[1]), (-2, -1))
        blocks = part.reshape(1, per_group, 16 // wh, wh, 16 // ww, ww).mean(axis=(3, 5), keepdims=True)
        expected = np.broadcast_to(blocks, (1, per_group, 16 // wh, wh, 16 // ww, ww)).reshape(part.shape)
        if shifted:
            expected = np.roll(expected, spec.shift, (-2, -1))
        np.testing.assert_allclose(out[:, g * per_group:(g + 1) * per_group], expected, atol=1e-12)


@pytest.mark.parametrize("shifted", [False, True])
def test_output_shape_matches_input(shifted):
    attn = FDWA(12, 4, 2, np.random.default_rng(3), shifted=shifted)
    x = Tensor(np.random.default_rng(4).normal(size=(2, 12, 8, 16)).astype(np.float32))
    assert attn(x).shape == x.shape
    with pytest.raises(DimensionError):
        attn(Tensor(np.zeros((1, 12, 6, 8), dtype=np.float32)))


def test_window_independence_under_perturbation():
    attn = FDWA(8, 4, 2, np.random.default_rng(5), dtype=np.float64)
    x = _x((1, 8, 16, 16), seed=8).data
    base = attn(Tensor(x)).data
    x2 = x.copy()
    x2[:, :, 3, 5] += 1.0  # inside the LL window covering rows 0..7, cols 0..7
    out = attn(Tensor(x2)).data
    changed = np.any(out != base, axis=(0, 1))
    assert changed[3, 5]
    assert not changed[8:].any() and not changed[:, 8:].any()


def test_output_projection_routes_groups():
    attn = FDWA(8, 4, 2, np.random.default_rng(6), dtype=np.float64)
    attn.capture = True
    x = _x((1, 8, 8, 8), seed=9)
    attn(x)
    captured = dict(attn.captured)
    full = attn.proj.data.copy()
    for kind in KINDS:
        cols = attn.group_channels(kind)
        only = np.zeros_like(full)
        only[:, cols] = full[:, cols]
        attn.proj.data[:] = only
        out = attn(x).data
        expected = np.einsum("oc,nchw->nohw", full[:, cols], captured[kind]) \
            + attn.proj_bias.data.reshape(1, -1, 1, 1)
        np.testing.assert_allclose(out, expected, atol=1e-12)
    attn.proj.data[:] = full


def test_scaled_attention_rows_are_convex():
    q, k = _x((3, 5, 4), 1), _x((3, 5, 4), 2)
    v = Tensor(np.full((3, 5, 4), 2.5))
    np.testing.assert_allclose(scaled_attention(q, k, v).data, 2.5, rtol=1e-14)


@pytest.mark.parametrize("C,K,s,H,W,shifted", [
    (4, 4, 1, 4, 4, False),
    (6, 4, 1, 8, 4, True),
    (8, 4, 2, 8, 8, True),
])
def test_fdwa_gradients(C, K, s, H, W, shifted):
    rng = np.random.default_rng(C + H)
    attn = FDWA(C, K, s, rng, shifted=shifted, dtype=np.float64)
    x = leaf(rng, (1, C, H, W))
    params = [x, attn.qkv, attn.proj, attn.proj_bias] + [t.table for t in attn.bias_tables]
    assert check(lambda: attn(x), params) < 1e-5
