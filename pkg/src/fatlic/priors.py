"""Probability models for the quantized latents and their rates in bits."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .rangecoder import TOTAL
from .nn import Module, parameter
from .tensor import Tensor, clip, log, matmul, reshape, sigmoid, softplus, tabs, tanh, transpose

# the smallest probability the 16-bit coder can give an in-table symbol
LIKELIHOOD_BOUND = 1.0 / TOTAL
_LN2 = np.log(2.0)


def gaussian_likelihood(values: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """P(v) = Phi((v - mu + 0.5)/sigma) - Phi((v - mu - 0.5)/sigma).

    Evaluated on the lower tail via |v - mu| to keep precision far from the mean.
    """
    dev = tabs(values - mu)
    upper = F.normal_cdf((0.5 - dev) / sigma)
    lower = F.normal_cdf((-0.5 - dev) / sigma)
    return clip(upper - lower, LIKELIHOOD_BOUND, None)


def bits(likelihood: Tensor) -> Tensor:
    """Total information content, -sum log2 p."""
    return log(likelihood).sum() * (-1.0 / _LN2)


def rate_estimate(values: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    return bits(gaussian_likelihood(values, mu, sigma))


class FactorizedPrior(Module):
    """Per-channel learned CDF built from monotone element-wise layers.

    Each channel owns a small chain ``x -> softplus(H) x + b -> x + tanh(a) tanh(x)``
    ending in a logit; the sigmoid of that logit is the cumulative distribution.
    """

    def __init__(self, channels: int, filters: tuple = (3, 3, 3), init_scale: float = 10.0,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        dims = (1,) + tuple(filters) + (1,)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices, self.biases, self.factors = [], [], []
        for k in range(len(filters) + 1):
            init = np.log(np.expm1(1.0 / scale / dims[k + 1]))
            self.matrices.append(_Holder(parameter(np.full((channels, dims[k + 1], dims[k]), init), dtype)))
            self.biases.append(_Holder(parameter(rng.uniform(-0.5, 0.5, (channels, dims[k + 1], 1)), dtype)))
            if k < len(filters):
                self.factors.append(_Holder(parameter(np.zeros((channels, dims[k + 1], 1)), dtype)))

    def logits_cdf(self, v: Tensor) -> Tensor:
        """``v`` is (C, 1, n); returns the CDF logits with the same shape."""
        x = v
        for k in range(len(self.matrices)):
            x = matmul(softplus(self.matrices[k].p), x) + self.biases[k].p
            if k < len(self.factors):
                x = x + tanh(self.factors[k].p) * tanh(x)
        return x

    def likelihood(self, z: Tensor) -> Tensor:
        """Probability mass of each (integer-spaced) value in ``z`` (N, C, H, W)."""
        N, C, H, W = z.shape
        v = reshape(transpose(z, (1, 0, 2, 3)), (C, 1, N * H * W))
        lower = self.logits_cdf(v - 0.5)
        upper = self.logits_cdf(v + 0.5)
        sign = -np.sign(lower.data + upper.data)
        sign[sign == 0] = 1.0
        sign = Tensor(sign.astype(v.dtype))
        lik = sign * (sigmoid(sign * upper) - sigmoid(sign * lower))
        lik = clip(lik, LIKELIHOOD_BOUND, None)
        return transpose(reshape(lik, (C, N, H, W)), (1, 0, 2, 3))

    def cdf_numpy(self, points: np.ndarray) -> np.ndarray:
        """Float64 CDF for every channel at the given points, shape (C, len(points))."""
        v = np.broadcast_to(np.asarray(points, dtype=np.float64), (self.channels, 1, len(points)))
        x = v
        for k in range(len(self.matrices)):
            m = np.logaddexp(0.0, self.matrices[k].p.data.astype(np.float64))
            x = m @ x + self.biases[k].p.data.astype(np.float64)
            if k < len(self.factors):
                x = x + np.tanh(self.factors[k].p.data.astype(np.float64)) * np.tanh(x)
        return 1.0 / (1.0 + np.exp(-x[:, 0, :]))


class _Holder(Module):
    def __init__(self, p: Tensor):
        self.p = p
