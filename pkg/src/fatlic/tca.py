"""Transformer-based channel-wise autoregressive entropy model.

The latent is cut into ``n_s`` channel slices. A learned pseudo start slice is
prepended and the last slice dropped, so sequence position ``p`` carries the
context for slice ``p + 1``. Attention runs over sequence positions
independently at every spatial location, with a causal mask letting position
``p`` see positions ``<= p``; every other layer is a 1x1 group convolution or
GroupNorm with one group per position. Parameters for slice ``i`` therefore
depend only on the hyperprior and slices ``< i``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .nn import Conv2d, GroupNorm, Module, kaiming_uniform, parameter
from .tensor import (
    ConfigurationError,
    ContractError,
    DimensionError,
    Tensor,
    clip,
    concat,
    exp,
    matmul,
    reshape,
    transpose,
)

SIGMA_MIN = 0.04
SIGMA_MAX = 256.0


@dataclass(frozen=True)
class TcaConfig:
    n_s: int = 5
    layers: int = 12
    r: int = 4
    heads: int = 16
    M: int = 320
    ffn_expansion: int = 2

    def __post_init__(self):
        if self.M % self.n_s:
            raise ConfigurationError(f"M={self.M} is not divisible by n_s={self.n_s}")
        if self.slice_width % self.heads:
            raise ConfigurationError(
                f"projected slice width {self.slice_width} not divisible by {self.heads} heads")

    @property
    def M_s(self) -> int:
        return self.M // self.n_s

    @property
    def slice_width(self) -> int:
        """Channels per sequence position after projection, r * M_s."""
        return self.r * self.M_s

    @property
    def width(self) -> int:
        return self.r * self.M

    @property
    def head_channels(self) -> int:
        """Channels one head covers across all real slices, r * M / heads."""
        return self.width // self.heads

    @classmethod
    def toy(cls) -> "TcaConfig":
        return cls(n_s=5, layers=2, r=4, heads=4, M=40)

    def to_dict(self) -> dict:
        return asdict(self)


def slice_split(y_hat: Tensor, n_s: int) -> list:
    M = y_hat.shape[1]
    if M % n_s:
        raise ConfigurationError(f"{M} channels cannot be split into {n_s} even slices")
    step = M // n_s
    return [y_hat[:, i * step:(i + 1) * step] for i in range(n_s)]


def slice_concat(slices) -> Tensor:
    return concat(list(slices), axis=1)


def causal_slice_mask(positions: int) -> np.ndarray:
    """Position p may attend to positions 0..p (position 0 is the pseudo start slice)."""
    return np.tril(np.ones((positions, positions), dtype=bool))


def _check_mask(mask: np.ndarray, positions: int) -> None:
    if not isinstance(mask, np.ndarray) or mask.dtype != bool or mask.shape != (positions, positions):
        raise ContractError(f"mask must be a boolean ({positions}, {positions}) array")
    if not mask[:, 0].all():
        raise ContractError("every position must be allowed to attend to the pseudo start slice")
    if np.triu(mask, 1).any():
        raise ContractError("mask lets a slice attend to a slice that is not yet decoded")


def masked_channel_attention(q: Tensor, k: Tensor, v: Tensor, positions: int, heads: int,
                             mask: np.ndarray) -> Tensor:
    """Slice-causal attention at each spatial location.

    ``q``, ``k``, ``v`` are (N, positions * width, H, W) with position-major
    channels. Each position's ``width`` channels are split into ``heads`` heads.
    """
    _check_mask(mask, positions)
    N, C, H, W = q.shape
    d = C // positions // heads

    def tokens(t):
        t = reshape(t, (N, positions, heads, d, H, W))
        return transpose(t, (0, 4, 5, 2, 1, 3))

    qt, kt, vt = tokens(q), tokens(k), tokens(v)
    logits = matmul(qt, transpose(kt, (0, 1, 2, 3, 5, 4))) * (1.0 / np.sqrt(d))
    attn = F.softmax(logits, axis=-1, mask=mask)
    out = matmul(attn, vt)
    out = transpose(out, (0, 4, 3, 5, 1, 2))
    return reshape(out, (N, C, H, W))


class TcaLayer(Module):
    """Pre-norm transformer layer with group-wise linear maps."""

    def __init__(self, cfg: TcaConfig, rng, dtype=np.float32):
        D, P = cfg.width, cfg.n_s
        self.cfg = cfg
        self.norm1 = GroupNorm(D, P, dtype)
        self.qkv = Conv2d(D, 3 * D, 1, rng, groups=P, dtype=dtype)
        self.proj = Conv2d(D, D, 1, rng, groups=P, dtype=dtype)
        self.norm2 = GroupNorm(D, P, dtype)
        hidden = D * cfg.ffn_expansion
        self.fc1 = Conv2d(D, hidden, 1, rng, groups=P, dtype=dtype)
        self.fc2 = Conv2d(hidden, D, 1, rng, groups=P, dtype=dtype)
        self.mask = causal_slice_mask(P)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        N, D, H, W = x.shape
        P, w = cfg.n_s, cfg.slice_width
        qkv = reshape(self.qkv(self.norm1(x)), (N, P, 3, w, H, W))
        q = reshape(qkv[:, :, 0], (N, D, H, W))
        k = reshape(qkv[:, :, 1], (N, D, H, W))
        v = reshape(qkv[:, :, 2], (N, D, H, W))
        x = x + self.proj(masked_channel_attention(q, k, v, P, cfg.heads, self.mask))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class EntropyParameters(Module):
    """Grouped 3x3 conv stack mapping (hyperprior, context) to (mu, sigma, residual)."""

    def __init__(self, cfg: TcaConfig, rng, dtype=np.float32):
        M, P = cfg.M, cfg.n_s
        cin = (2 + cfg.r) * M
        self.cfg = cfg
        self.conv1 = Conv2d(cin, 3 * M, 3, rng, groups=P, dtype=dtype)
        self.conv2 = Conv2d(3 * M, 3 * M, 3, rng, groups=P, dtype=dtype)
        self.conv3 = Conv2d(3 * M, 3 * M, 3, rng, groups=P, dtype=dtype)
        # residual outputs start at zero so a freshly attached model leaves y_hat untouched
        w = self.conv3.weight.data.reshape(P, 3, cfg.M_s, -1)
        w[:, 2] = 0.0
        self.conv3.bias.data.reshape(P, 3, cfg.M_s)[:, 2] = 0.0

    def forward(self, phi: Tensor, y_out: Tensor) -> tuple:
        cfg = self.cfg
        N, _, H, W = phi.shape
        M = cfg.M
        ph = reshape(phi, (N, M, 2, H, W))
        yo = reshape(y_out, (N, M, cfg.r, H, W))
        cat = reshape(concat([ph, yo], axis=2), (N, (2 + cfg.r) * M, H, W))
        out = self.conv3(F.gelu(self.conv2(F.gelu(self.conv1(cat)))))
        out = reshape(out, (N, cfg.n_s, 3, cfg.M_s, H, W))
        mu = reshape(out[:, :, 0], (N, M, H, W))
        raw = reshape(out[:, :, 1], (N, M, H, W))
        res = reshape(out[:, :, 2], (N, M, H, W))
        return mu, scale_from_raw(raw), res


def scale_from_raw(raw: Tensor) -> Tensor:
    return exp(clip(raw, np.log(SIGMA_MIN), np.log(SIGMA_MAX)))


class TCA(Module):
    def __init__(self, cfg: TcaConfig, rng, dtype=np.float32):
        self.cfg = cfg
        self.start = parameter(np.zeros((cfg.M_s, 1, 1)), dtype)
        fan_in = cfg.M_s
        self.project_weight = parameter(
            kaiming_uniform(rng, (cfg.width, cfg.M_s), fan_in), dtype)
        self.project_bias = parameter(np.zeros(cfg.width), dtype)
        self.layers = [TcaLayer(cfg, rng, dtype) for _ in range(cfg.layers)]
        self.params_net = EntropyParameters(cfg, rng, dtype)

    def group_project(self, y_hat: Tensor) -> Tensor:
        """1x1 group conv M -> r*M with one group per slice."""
        return F.linear_1x1(y_hat, self.project_weight, self.project_bias, groups=self.cfg.n_s)

    def context(self, y_hat: Tensor) -> Tensor:
        """Sequence input: pseudo start slice followed by slices 1..n_s-1."""
        cfg = self.cfg
        N, M, H, W = y_hat.shape
        if M != cfg.M:
            raise ConfigurationError(f"T-CA built for M={cfg.M}, latent has {M} channels")
        start = Tensor(np.zeros((N, cfg.M_s, H, W), dtype=y_hat.dtype)) + self.start
        return concat([start, y_hat[:, :M - cfg.M_s]], axis=1)

    def forward(self, phi: Tensor, y_hat: Tensor) -> tuple:
        """Return (mu, sigma, residual), each shaped like ``y_hat``."""
        if phi.shape[1] != 2 * self.cfg.M or phi.shape[2:] != y_hat.shape[2:]:
            raise DimensionError(f"hyperprior {phi.shape} does not match latent {y_hat.shape}")
        x = self.group_project(self.context(y_hat))
        for layer in self.layers:
            x = layer(x)
        return self.params_net(phi, x)


def apply_latent_residual(y_hat: Tensor, r: Tensor) -> Tensor:
    if y_hat.shape != r.shape:
        raise DimensionError(f"residual {r.shape} does not match latent {y_hat.shape}")
    return y_hat + r
