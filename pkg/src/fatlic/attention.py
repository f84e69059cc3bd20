"""Frequency-decomposition window attention (FDWA).

Heads are split evenly into four groups. Each group attends inside windows of
its own shape: LL uses 4s x 4s, HH s x s, HL s x 4s and LH 4s x s
(height x width). Group outputs are concatenated along channels and mixed by
an output projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import Module, kaiming_uniform, parameter
from .tensor import (
    ConfigurationError,
    DimensionError,
    Tensor,
    concat,
    matmul,
    reshape,
    roll,
    take,
    transpose,
)

KINDS = ("LL", "HH", "HL", "LH")


@dataclass(frozen=True)
class WindowSpec:
    s: int
    kind: str
    shifted: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown window kind {self.kind!r}")

    @property
    def extents(self) -> tuple:
        s = self.s
        return {"LL": (4 * s, 4 * s), "HH": (s, s), "HL": (s, 4 * s), "LH": (4 * s, s)}[self.kind]

    @property
    def shift(self) -> tuple:
        wh, ww = self.extents
        return wh // 2, ww // 2


def window_partition(x: Tensor, wh: int, ww: int) -> Tensor:
    """(N, C, H, W) -> (N*M, C, wh, ww), windows in row-major order per image."""
    squeeze = x.ndim == 3
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    N, C, H, W = x.shape
    if H % wh or W % ww:
        raise DimensionError(f"{H}x{W} map is not divisible into {wh}x{ww} windows")
    y = reshape(x, (N, C, H // wh, wh, W // ww, ww))
    y = transpose(y, (0, 2, 4, 1, 3, 5))
    return reshape(y, (N * (H // wh) * (W // ww), C, wh, ww))


def window_merge(windows: Tensor, H: int, W: int, batch: int = 1) -> Tensor:
    """Inverse of :func:`window_partition`."""
    M, C, wh, ww = windows.shape
    y = reshape(windows, (batch, H // wh, W // ww, C, wh, ww))
    y = transpose(y, (0, 3, 1, 4, 2, 5))
    return reshape(y, (batch, C, H, W))


def shift(x: Tensor, spec: WindowSpec) -> Tensor:
    """Cyclic roll by half the window extents (towards the origin)."""
    sh, sw = spec.shift
    return roll(x, (-sh, -sw), (-2, -1))


def unshift(x: Tensor, spec: WindowSpec) -> Tensor:
    sh, sw = spec.shift
    return roll(x, (sh, sw), (-2, -1))


def relative_position_index(wh: int, ww: int) -> np.ndarray:
    """(T, T) index into a ((2wh-1)(2ww-1)) bias table."""
    ys, xs = np.meshgrid(np.arange(wh), np.arange(ww), indexing="ij")
    coords = np.stack([ys.ravel(), xs.ravel()])
    rel = coords[:, :, None] - coords[:, None, :]
    return (rel[0] + wh - 1) * (2 * ww - 1) + (rel[1] + ww - 1)


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, bias: Tensor | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d) + bias) v over the second-to-last axis."""
    d = q.shape[-1]
    logits = matmul(q, transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)))
    logits = logits * (1.0 / np.sqrt(d))
    if bias is not None:
        logits = logits + bias
    return matmul(F.softmax(logits, axis=-1), v)


def window_attention(x_windows: Tensor, wq: Tensor, wk: Tensor, wv: Tensor,
                     bias: Tensor | None = None) -> Tensor:
    """Per-window multi-head attention on token sequences.

    ``x_windows`` is (B, T, C); ``wq``, ``wk``, ``wv`` are (heads, C, d).
    Returns (B, heads, T, d). Windows never exchange information.
    """
    if wq.shape != wk.shape or wq.shape != wv.shape:
        raise ConfigurationError("query/key/value projections must share a shape")
    if x_windows.shape[-1] != wq.shape[1]:
        raise ConfigurationError(
            f"token width {x_windows.shape[-1]} does not match projection input {wq.shape[1]}")
    B, T, C = x_windows.shape
    xw = reshape(x_windows, (B, 1, T, C))
    return scaled_attention(matmul(xw, wq), matmul(xw, wk), matmul(xw, wv), bias)


class FDWA(Module):
    """Four parallel window-attention groups followed by an output projection.

    ``heads`` must be a multiple of 4. The per-head width is ``channels // heads``
    when that divides evenly, otherwise ``ceil(channels / heads)`` with the
    output projection mapping the wider concatenation back to ``channels``.
    """

    def __init__(self, channels: int, heads: int, s: int, rng: np.random.Generator,
                 shifted: bool = False, position_bias: bool = True, dtype=np.float32):
        if heads % 4:
            raise ConfigurationError(f"FDWA needs a head count divisible by 4, got {heads}")
        self.channels = channels
        self.heads = heads
        self.head_dim = -(-channels // heads)
        self.s = s
        self.shifted = shifted
        self.specs = [WindowSpec(s, kind, shifted) for kind in KINDS]
        inner = heads * self.head_dim
        self.qkv = parameter(kaiming_uniform(rng, (3 * inner, channels), channels), dtype)
        self.proj = parameter(kaiming_uniform(rng, (channels, inner), inner), dtype)
        self.proj_bias = parameter(np.zeros(channels), dtype)
        self.position_bias = position_bias
        hg = heads // 4
        self.bias_tables = []
        self._bias_index = []
        for spec in self.specs:
            wh, ww = spec.extents
            if position_bias:
                table = rng.normal(0.0, 0.02, size=((2 * wh - 1) * (2 * ww - 1), hg))
                self.bias_tables.append(_BiasTable(parameter(table, dtype)))
            self._bias_index.append(relative_position_index(wh, ww))
        self.capture = False
        self.captured: dict = {}

    @property
    def multiple(self) -> int:
        return 4 * self.s

    def forward(self, x: Tensor) -> Tensor:
        N, C, H, W = x.shape
        if C != self.channels:
            raise ConfigurationError(f"FDWA built for {self.channels} channels, got {C}")
        if H % self.multiple or W % self.multiple:
            raise DimensionError(f"FDWA input {H}x{W} must be a multiple of {self.multiple}")
        K, d = self.heads, self.head_dim
        hg = K // 4
        qkv = F.linear_1x1(x, self.qkv)
        qkv = reshape(qkv, (N, 3, K, d, H, W))
        outs = []
        for g, spec in enumerate(self.specs):
            wh, ww = spec.extents
            part = qkv[:, :, g * hg:(g + 1) * hg]
            if spec.shifted:
                part = shift(part, spec)
            nh, nw = H // wh, W // ww
            part = reshape(part, (N, 3, hg, d, nh, wh, nw, ww))
            part = transpose(part, (1, 0, 4, 6, 2, 5, 7, 3))
            part = reshape(part, (3, N * nh * nw, hg, wh * ww, d))
            bias = None
            if self.position_bias:
                bias = take(self.bias_tables[g].table, self._bias_index[g], axis=0)
                bias = transpose(bias, (2, 0, 1))
            y = scaled_attention(part[0], part[1], part[2], bias)
            y = reshape(y, (N, nh, nw, hg, wh, ww, d))
            y = transpose(y, (0, 3, 6, 1, 4, 2, 5))
            y = reshape(y, (N, hg * d, H, W))
            if spec.shifted:
                y = unshift(y, spec)
            if self.capture:
                self.captured[spec.kind] = y.data.copy()
            outs.append(y)
        y = concat(outs, axis=1)
        return F.linear_1x1(y, self.proj, self.proj_bias)

    def group_channels(self, kind: str) -> slice:
        """Columns of the output projection that consume group ``kind``."""
        g = KINDS.index(kind)
        width = self.heads // 4 * self.head_dim
        return slice(g * width, (g + 1) * width)


class _BiasTable(Module):
    def __init__(self, table: Tensor):
        self.table = table
