"""Radix-2 FFT and block-wise 2-D transforms with gradients.

Complex values travel through the tape packed as a trailing axis of length 2
(real, imag); :class:`ComplexTensor` is a thin view over that packed tensor.
"""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, getitem, make_result, stack

_TWIDDLES: dict = {}
_BITREV: dict = {}


def _bitrev(n: int) -> np.ndarray:
    if n not in _BITREV:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = rev
    return _BITREV[n]


def _twiddle(m: int, inverse: bool, dtype) -> np.ndarray:
    key = (m, inverse, np.dtype(dtype).str)
    if key not in _TWIDDLES:
        sign = 1.0 if inverse else -1.0
        k = np.arange(m // 2)
        _TWIDDLES[key] = np.exp(sign * 2j * np.pi * k / m).astype(dtype)
    return _TWIDDLES[key]


def fft_last_axis(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative decimation-in-time FFT along the last axis (power-of-two length)."""
    n = a.shape[-1]
    if n & (n - 1) or n == 0:
        raise DimensionError(f"radix-2 FFT needs a power-of-two length, got {n}")
    cdtype = np.complex128 if a.dtype in (np.float64, np.complex128) else np.complex64
    lead = a.shape[:-1]
    x = np.asarray(a, dtype=cdtype)[..., _bitrev(n)]
    buf = np.empty_like(x)
    m = 2
    while m <= n:
        half = m // 2
        src = x.reshape(lead + (n // m, m))
        dst = buf.reshape(lead + (n // m, m))
        odd = src[..., half:] * _twiddle(m, inverse, cdtype)
        np.add(src[..., :half], odd, out=dst[..., :half])
        np.subtract(src[..., :half], odd, out=dst[..., half:])
        x, buf = buf, x
        m *= 2
    if inverse:
        x = x / n
    return x


def fft2(a: np.ndarray, inverse: bool = False) -> np.ndarray:
    """2-D FFT over the last two axes."""
    x = fft_last_axis(a, inverse)
    x = fft_last_axis(np.swapaxes(x, -1, -2), inverse)
    return np.swapaxes(x, -1, -2)


def _to_blocks(x: np.ndarray, bh: int, bw: int) -> np.ndarray:
    *lead, H, W = x.shape
    y = x.reshape(tuple(lead) + (H // bh, bh, W // bw, bw))
    nd = len(lead)
    return y.transpose(tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3))


def _from_blocks(x: np.ndarray) -> np.ndarray:
    *lead, nh, nw, bh, bw = x.shape
    nd = len(lead)
    y = x.transpose(tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3))
    return y.reshape(tuple(lead) + (nh * bh, nw * bw))


def _pack(z: np.ndarray, dtype) -> np.ndarray:
    return np.stack((z.real, z.imag), axis=-1).astype(dtype, copy=False)


def _unpack(p: np.ndarray) -> np.ndarray:
    return p[..., 0] + 1j * p[..., 1]


class ComplexTensor:
    """Complex array stored as a real tensor with a trailing (re, im) axis."""

    __slots__ = ("packed",)

    def __init__(self, packed: Tensor):
        if packed.shape[-1] != 2:
            raise DimensionError("packed complex tensor needs a trailing axis of length 2")
        self.packed = packed

    @classmethod
    def from_parts(cls, real: Tensor, imag: Tensor) -> "ComplexTensor":
        return cls(stack([real, imag], axis=-1))

    @property
    def shape(self) -> tuple:
        return self.packed.shape[:-1]

    @property
    def real(self) -> Tensor:
        return getitem(self.packed, (Ellipsis, 0))

    @property
    def imag(self) -> Tensor:
        return getitem(self.packed, (Ellipsis, 1))

    def numpy(self) -> np.ndarray:
        return _unpack(self.packed.data)

    def __mul__(self, other: "ComplexTensor") -> "ComplexTensor":
        a, b = self.real, self.imag
        c, d = other.real, other.imag
        return ComplexTensor.from_parts(a * c - b * d, a * d + b * c)

    def abs(self) -> np.ndarray:
        return np.abs(self.numpy())


def fft2_block(x: Tensor, block) -> ComplexTensor:
    """Partition the last two axes into ``block`` tiles and FFT each tile.

    Output layout is (..., H/bh, W/bw, bh, bw) complex.
    """
    bh, bw = block
    H, W = x.shape[-2:]
    if H % bh or W % bw:
        raise DimensionError(f"extent {H}x{W} not divisible by block {bh}x{bw}")
    n = bh * bw
    spec = fft2(_to_blocks(x.data, bh, bw))

    def backward(g):
        grad = fft2(_unpack(g), inverse=True).real * n
        return (_from_blocks(grad).astype(x.dtype, copy=False),)

    return ComplexTensor(make_result(_pack(spec, x.dtype), (x,), backward))


def ifft2_block(z: ComplexTensor) -> ComplexTensor:
    """Inverse of :func:`fft2_block`: per-tile inverse FFT followed by tile merge."""
    p = z.packed
    bh, bw = p.shape[-3:-1]
    n = bh * bw
    spatial = _from_blocks(fft2(_unpack(p.data), inverse=True))

    def backward(g):
        grad = fft2(_to_blocks(_unpack(g), bh, bw)) / n
        return (_pack(grad, p.dtype),)

    return ComplexTensor(make_result(_pack(spatial, p.dtype), (p,), backward))

