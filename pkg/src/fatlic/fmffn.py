"""Frequency-modulation feed-forward network.

A pointwise FFN whose output is split into (4s x 4s) tiles, moved to the
frequency domain, scaled element-wise by a learnable complex filter shared by
every tile, and brought back. The real part of the inverse transform is kept.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .fft import ComplexTensor, fft2_block, ifft2_block
from .nn import Module, kaiming_uniform, parameter
from .tensor import DimensionError, Tensor, reshape


class FMFFN(Module):
    def __init__(self, channels: int, s: int, rng: np.random.Generator, expansion: int = 2,
                 dtype=np.float32):
        hidden = channels * expansion
        self.block = 4 * s
        self.w1 = parameter(kaiming_uniform(rng, (hidden, channels), channels), dtype)
        self.b1 = parameter(np.zeros(hidden), dtype)
        self.w2 = parameter(kaiming_uniform(rng, (channels, hidden), hidden), dtype)
        self.b2 = parameter(np.zeros(channels), dtype)
        # identity modulation at init: real part 1, imaginary part 0
        filt = np.zeros((channels, self.block, self.block, 2))
        filt[..., 0] = 1.0
        self.filter = parameter(filt, dtype)

    def ffn(self, x: Tensor) -> Tensor:
        return F.linear_1x1(F.gelu(F.linear_1x1(x, self.w1, self.b1)), self.w2, self.b2)

    def forward(self, x: Tensor) -> Tensor:
        h = self.ffn(x)
        H, W = h.shape[-2:]
        if H % self.block or W % self.block:
            raise DimensionError(f"FMFFN input {H}x{W} must be a multiple of {self.block}")
        spec = fft2_block(h, (self.block, self.block))
        C = self.filter.shape[0]
        w = ComplexTensor(reshape(self.filter, (C, 1, 1, self.block, self.block, 2)))
        return ifft2_block(spec * w).real

    def filter_magnitude(self) -> np.ndarray:
        """|W| per channel with the DC term moved to the centre, shape (C, B, B)."""
        mag = np.hypot(self.filter.data[..., 0], self.filter.data[..., 1])
        return np.fft.fftshift(mag, axes=(-2, -1))
