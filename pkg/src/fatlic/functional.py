"""Neural-network primitives with hand-written backward passes."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from .tensor import (
    ConfigurationError,
    DimensionError,
    Tensor,
    as_tensor,
    make_result,
    reshape,
    transpose,
)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

GROUP_NORM_EPS = 1e-6


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0,
           groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation on NCHW input.

    ``w`` has shape (out, in/groups, kh, kw). Each group is evaluated as an
    independent batched matrix product, so outputs of group g never read
    channels outside group g.
    """
    N, C, H, W = x.shape
    O, Cg, kh, kw = w.shape
    if C % groups or O % groups or Cg != C // groups:
        raise ConfigurationError(
            f"conv2d: {C} input channels, {O} outputs, weight in-channels {Cg}, groups={groups}")
    Hp, Wp = H + 2 * pad, W + 2 * pad
    if kh > Hp or kw > Wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    Og = O // groups
    K = Cg * kh * kw
    xd = x.data
    pointwise = kh == 1 and kw == 1 and stride == 1 and pad == 0
    if pointwise:
        cols = xd.reshape(N, groups, K, H * W)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
        cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(N, groups, K, Ho * Wo)
    wmat = w.data.reshape(groups, Og, K)
    out = np.matmul(wmat, cols).reshape(N, O, Ho, Wo)
    if b is not None:
        out = out + b.data.reshape(1, O, 1, 1)

    def backward(g):
        g4 = g.reshape(N, groups, Og, Ho * Wo)
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.matmul(g4, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(w.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gcols = np.matmul(wmat.transpose(0, 2, 1), g4)
            if pointwise:
                gx = gcols.reshape(N, C, H, W)
            else:
                gcols = gcols.reshape(N, C, kh, kw, Ho, Wo)
                gxp = np.zeros((N, C, Hp, Wp), dtype=xd.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * (Ho - 1) + 1:stride,
                            j:j + stride * (Wo - 1) + 1:stride] += gcols[:, :, i, j]
                gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_result(out, parents, backward)


def normal_cdf(x: Tensor) -> Tensor:
    xd = x.data
    out = ndtr(xd).astype(xd.dtype, copy=False)
    return make_result(out, (x,), lambda g: (g * _INV_SQRT_2PI * np.exp(-0.5 * xd * xd),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    xd = x.data
    cdf = ndtr(xd).astype(xd.dtype, copy=False)
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
    return make_result(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),))


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``. ``mask`` (broadcastable, True = allowed) removes entries."""
    xd = x.data
    if mask is not None:
        xd = np.where(mask, xd, -np.inf)
    m = xd.max(axis=axis, keepdims=True)
    e = np.exp(xd - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (x,), backward)


def _normalize(xd: np.ndarray, axes: tuple, eps: float):
    mu = xd.mean(axis=axes, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return xc * inv, inv


def _normalize_backward(gxhat, xhat, inv, axes):
    n = 1
    for a in axes:
        n *= xhat.shape[a]
    s1 = gxhat.sum(axis=axes, keepdims=True)
    s2 = (gxhat * xhat).sum(axis=axes, keepdims=True)
    return inv * (gxhat - s1 / n - xhat * s2 / n)


def group_norm(x: Tensor, n_groups: int, gamma: Tensor, beta: Tensor,
               eps: float = GROUP_NORM_EPS) -> Tensor:
    """GroupNorm over (channels-in-group, H, W) of an NCHW tensor."""
    N, C, H, W = x.shape
    if C % n_groups:
        raise ConfigurationError(f"group_norm: {C} channels not divisible by {n_groups} groups")
    xg = x.data.reshape(N, n_groups, C // n_groups, H, W)
    xhat, inv = _normalize(xg, (2, 3, 4), eps)
    xhat = xhat.reshape(N, C, H, W)
    gd = gamma.data.reshape(1, C, 1, 1)
    out = xhat * gd + beta.data.reshape(1, C, 1, 1)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = (g * gd).reshape(N, n_groups, C // n_groups, H, W)
            gx = _normalize_backward(gxhat, xhat.reshape(xg.shape), inv, (2, 3, 4)).reshape(N, C, H, W)
        return gx, gg, gbeta

    return make_result(out, (x, gamma, beta), backward)


def channel_layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """LayerNorm across channels at every spatial position of an NCHW tensor."""
    N, C, H, W = x.shape
    xhat, inv = _normalize(x.data, (1,), eps)
    gd = gamma.data.reshape(1, C, 1, 1)
    out = xhat * gd + beta.data.reshape(1, C, 1, 1)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gbeta = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = _normalize_backward(g * gd, xhat, inv, (1,)) if x.requires_grad else None
        return gx, gg, gbeta

    return make_result(out, (x, gamma, beta), backward)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    N, C, H, W = x.shape
    c = C // (r * r)
    y = reshape(x, (N, c, r, r, H, W))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (N, c, H * r, W * r))


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling; odd extents get one zero row/column counted in the mean."""
    from .tensor import pad as tpad

    N, C, H, W = x.shape
    ph, pw = H % 2, W % 2
    if ph or pw:
        x = tpad(x, [(0, 0), (0, 0), (ph, ph), (pw, pw)])
        H, W = H + 2 * ph, W + 2 * pw
        x = x[:, :, : H - H % 2, : W - W % 2]
        H, W = x.shape[2], x.shape[3]
    y = reshape(x, (N, C, H // 2, 2, W // 2, 2))
    return y.mean(axis=(3, 5))


def linear_1x1(x: Tensor, w: Tensor, b: Tensor | None = None, groups: int = 1) -> Tensor:
    """1x1 (optionally grouped) convolution with a 2-D weight (out, in/groups)."""
    return conv2d(x, reshape(w, w.shape + (1, 1)), b, groups=groups)


def scalar(value: float, like: Tensor) -> Tensor:
    return as_tensor(np.asarray(value, dtype=like.dtype))
