"""Analysis, synthesis and hyper transforms built from residual blocks and FAT pairs."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import functional as F
from .attention import FDWA
from .fmffn import FMFFN
from .nn import ChannelLayerNorm, Conv2d, Module, parameter
from .tensor import ConfigurationError, DimensionError, Tensor, leaky_relu, pad, power


@dataclass(frozen=True)
class TransformConfig:
    channels: tuple = (96, 144, 256, 320)
    hyper_channels: int = 192
    heads: tuple = (8, 8, 16, 16, 32, 32)
    hyper_heads: int = 32
    s: int = 4
    hyper_s: int = 1
    # RBS stages (1-based) followed by a FAT pair in g_a; mirrored in g_s
    fat_stages: tuple = (2, 3, 4)
    hyper_fat: bool = True
    ffn_expansion: int = 2
    position_bias: bool = True

    def __post_init__(self):
        if len(self.channels) != 4:
            raise ConfigurationError("channels must be (C1, C2, C3, M)")
        if len(self.heads) != 2 * len(self.fat_stages):
            raise ConfigurationError("need two head counts per FAT pair")
        for h in tuple(self.heads) + (self.hyper_heads,):
            if h % 4:
                raise ConfigurationError(f"head count {h} is not a multiple of 4")

    @property
    def M(self) -> int:
        return self.channels[3]

    @property
    def hyper_out(self) -> int:
        return 2 * self.M

    @classmethod
    def toy(cls) -> "TransformConfig":
        return cls(channels=(12, 18, 32, 40), hyper_channels=24, heads=(4,) * 6, hyper_heads=4)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "TransformConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


PAD_MULTIPLE = 64


def pad_to_multiple(x: np.ndarray, m: int = PAD_MULTIPLE) -> tuple:
    """Reflect-pad the bottom/right so H and W are multiples of ``m``."""
    H, W = x.shape[-2:]
    Hp, Wp = -(-H // m) * m, -(-W // m) * m
    if (Hp, Wp) == (H, W):
        return x, (H, W)
    widths = [(0, 0)] * (x.ndim - 2) + [(0, Hp - H), (0, Wp - W)]
    return np.pad(x, widths, mode="reflect" if min(H, W) > 1 else "edge"), (H, W)


def crop_to(x, extents: tuple):
    H, W = extents
    return x[..., :H, :W]


class GDN(Module):
    """Generalized divisive normalization (inverse=True gives IGDN)."""

    def __init__(self, channels: int, inverse: bool = False, dtype=np.float32):
        self.inverse = inverse
        self.beta = parameter(np.ones(channels), dtype)
        self.gamma = parameter(np.sqrt(0.1) * np.eye(channels), dtype)

    def forward(self, x: Tensor) -> Tensor:
        beta = self.beta * self.beta + 1e-6
        gamma = self.gamma * self.gamma
        norm = F.linear_1x1(x * x, gamma, beta)
        return x * power(norm, 0.5 if self.inverse else -0.5)


class RBS(Module):
    """Residual block with stride 2: halves H and W."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32):
        self.conv1 = Conv2d(cin, cout, 3, rng, stride=2, dtype=dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, dtype=dtype)
        self.gdn = GDN(cout, dtype=dtype)
        self.skip = Conv2d(cin, cout, 1, rng, stride=2, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        out = self.gdn(self.conv2(leaky_relu(self.conv1(x))))
        return out + self.skip(x)


class SubpelConv(Module):
    def __init__(self, cin: int, cout: int, rng, r: int = 2, dtype=np.float32):
        self.r = r
        self.conv = Conv2d(cin, cout * r * r, 3, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return F.pixel_shuffle(self.conv(x), self.r)


class RBU(Module):
    """Residual block with sub-pixel upsampling: doubles H and W."""

    def __init__(self, cin: int, cout: int, rng, dtype=np.float32):
        self.up = SubpelConv(cin, cout, rng, dtype=dtype)
        self.conv = Conv2d(cout, cout, 3, rng, dtype=dtype)
        self.igdn = GDN(cout, inverse=True, dtype=dtype)
        self.skip = SubpelConv(cin, cout, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        out = self.igdn(self.conv(leaky_relu(self.up(x))))
        return out + self.skip(x)


class FATBlock(Module):
    """Pre-norm transformer block: FDWA then FMFFN, each with a residual.

    The input is zero-padded to a multiple of the largest window (4s) and
    cropped back afterwards.
    """

    def __init__(self, channels: int, heads: int, s: int, rng, shifted: bool = False,
                 expansion: int = 2, position_bias: bool = True, dtype=np.float32):
        self.s = s
        self.norm1 = ChannelLayerNorm(channels, dtype)
        self.attn = FDWA(channels, heads, s, rng, shifted=shifted, position_bias=position_bias,
                         dtype=dtype)
        self.norm2 = ChannelLayerNorm(channels, dtype)
        self.ffn = FMFFN(channels, s, rng, expansion=expansion, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        H, W = x.shape[-2:]
        m = 4 * self.s
        ph, pw = (-H) % m, (-W) % m
        if ph or pw:
            x = pad(x, [(0, 0), (0, 0), (0, ph), (0, pw)])
        x = x + self.attn(self.norm1(x))
        x = x + self.ffn(self.norm2(x))
        if ph or pw:
            x = x[:, :, :H, :W]
        return x


class FATPair(Module):
    """Regular FAT block followed by its shifted-window twin."""

    def __init__(self, channels: int, heads: tuple, s: int, rng, expansion: int = 2,
                 position_bias: bool = True, dtype=np.float32):
        self.blocks = [
            FATBlock(channels, heads[0], s, rng, shifted=False, expansion=expansion,
                     position_bias=position_bias, dtype=dtype),
            FATBlock(channels, heads[1], s, rng, shifted=True, expansion=expansion,
                     position_bias=position_bias, dtype=dtype),
        ]

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


def _fat_heads(cfg: TransformConfig) -> dict:
    return {stage: (cfg.heads[2 * i], cfg.heads[2 * i + 1]) for i, stage in enumerate(cfg.fat_stages)}


class Analysis(Module):
    """g_a: image (N, 3, H, W) -> latent (N, M, H/16, W/16)."""

    def __init__(self, cfg: TransformConfig, rng, dtype=np.float32):
        chans = (3,) + tuple(cfg.channels)
        heads = _fat_heads(cfg)
        self.layers = []
        for k in range(1, 5):
            self.layers.append(RBS(chans[k - 1], chans[k], rng, dtype))
            if k in heads:
                self.layers.append(FATPair(chans[k], heads[k], cfg.s, rng, cfg.ffn_expansion,
                                           cfg.position_bias, dtype))

    def forward(self, x: Tensor) -> Tensor:
        H, W = x.shape[-2:]
        if H % 16 or W % 16:
            raise DimensionError(f"analysis input {H}x{W} must be a multiple of 16 (pad first)")
        for layer in self.layers:
            x = layer(x)
        return x

    def fat_pairs(self) -> list:
        return [layer for layer in self.layers if isinstance(layer, FATPair)]


class Synthesis(Module):
    """g_s: latent (N, M, h, w) -> image (N, 3, 16h, 16w)."""

    def __init__(self, cfg: TransformConfig, rng, dtype=np.float32):
        chans = (3,) + tuple(cfg.channels)
        heads = _fat_heads(cfg)
        self.layers = []
        for k in range(4, 0, -1):
            if k in heads:
                self.layers.append(FATPair(chans[k], heads[k], cfg.s, rng, cfg.ffn_expansion,
                                           cfg.position_bias, dtype))
            self.layers.append(RBU(chans[k], chans[k - 1], rng, dtype))

    def forward(self, y: Tensor) -> Tensor:
        for layer in self.layers:
            y = layer(y)
        return y

    def fat_pairs(self) -> list:
        return [layer for layer in self.layers if isinstance(layer, FATPair)]


class HyperAnalysis(Module):
    """h_a: latent (N, M, h, w) -> hyper-latent (N, N_hyper, h/4, w/4)."""

    def __init__(self, cfg: TransformConfig, rng, dtype=np.float32):
        n = cfg.hyper_channels
        self.layers = [RBS(cfg.M, n, rng, dtype)]
        if cfg.hyper_fat:
            self.layers.append(FATPair(n, (cfg.hyper_heads,) * 2, cfg.hyper_s, rng,
                                       cfg.ffn_expansion, cfg.position_bias, dtype))
        self.layers.append(RBS(n, n, rng, dtype))

    def forward(self, y: Tensor) -> Tensor:
        for layer in self.layers:
            y = layer(y)
        return y


class HyperSynthesis(Module):
    """h_s: hyper-latent -> hyperprior features (N, 2M, 4h, 4w)."""

    def __init__(self, cfg: TransformConfig, rng, dtype=np.float32):
        n = cfg.hyper_channels
        self.layers = [RBU(n, n, rng, dtype)]
        if cfg.hyper_fat:
            self.layers.append(FATPair(n, (cfg.hyper_heads,) * 2, cfg.hyper_s, rng,
                                       cfg.ffn_expansion, cfg.position_bias, dtype))
        self.layers.append(RBU(n, cfg.hyper_out, rng, dtype))

    def forward(self, z: Tensor) -> Tensor:
        for layer in self.layers:
            z = layer(z)
        return z
