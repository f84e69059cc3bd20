"""The full codec: transforms, hyperprior, entropy model and range-coded bitstreams."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import rangecoder as rc
from .bitstream import Bitstream, FormatError
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import Module
from .priors import FactorizedPrior, gaussian_likelihood, bits
from .tca import TCA, TcaConfig, scale_from_raw, slice_split
from .tensor import (
    ConfigurationError,
    Tensor,
    clip,
    no_grad,
    reshape,
    round_half_away,
    round_ste,
)
from .transforms import (
    PAD_MULTIPLE,
    Analysis,
    HyperAnalysis,
    HyperSynthesis,
    Synthesis,
    TransformConfig,
    crop_to,
    pad_to_multiple,
)

ENTROPY_MODES = ("hyperprior", "tca")
MSE_LAMBDAS = (0.0025, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483)
Z_TAIL_MASS = 1e-9


class ModelMismatchError(ValueError):
    """A bitstream or checkpoint does not belong to this model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    transform: TransformConfig = field(default_factory=TransformConfig)
    tca: TcaConfig = field(default_factory=TcaConfig)
    entropy: str = "tca"
    lambda_index: int = 3

    def __post_init__(self):
        if self.entropy not in ENTROPY_MODES:
            raise ConfigurationError(f"entropy model must be one of {ENTROPY_MODES}")
        if self.tca.M != self.transform.M:
            raise ConfigurationError(
                f"T-CA latent width {self.tca.M} differs from transform latent {self.transform.M}")
        if not 0 <= self.lambda_index < 256:
            raise ConfigurationError("lambda index must fit one byte")

    @classmethod
    def toy(cls, entropy: str = "tca", lambda_index: int = 3) -> "ModelConfig":
        return cls(TransformConfig.toy(), TcaConfig.toy(), entropy, lambda_index)

    def with_entropy(self, entropy: str) -> "ModelConfig":
        return ModelConfig(self.transform, self.tca, entropy, self.lambda_index)

    def to_dict(self) -> dict:
        return {"transform": self.transform.to_dict(), "tca": self.tca.to_dict(),
                "entropy": self.entropy, "lambda_index": self.lambda_index}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(TransformConfig.from_dict(d["transform"]), TcaConfig(**d["tca"]),
                   d["entropy"], d["lambda_index"])

    def config_hash(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).digest()[:8]


@dataclass
class Latents:
    """Everything the inference path derives from one padded image."""

    y: np.ndarray
    z_symbols: np.ndarray
    phi: Tensor
    y_symbols: np.ndarray
    y_hat: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    residual: np.ndarray


class FatLic(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        t = cfg.transform
        self.g_a = Analysis(t, rng, dtype)
        self.g_s = Synthesis(t, rng, dtype)
        self.h_a = HyperAnalysis(t, rng, dtype)
        self.h_s = HyperSynthesis(t, rng, dtype)
        self.z_prior = FactorizedPrior(t.hyper_channels, rng=rng, dtype=dtype)
        self.tca = TCA(cfg.tca, rng, dtype) if cfg.entropy == "tca" else None

    # ------------------------------------------------------------ shared pieces
    def hyper_params(self, phi: Tensor) -> tuple:
        """Hyperprior-only Gaussian parameters: phi pairs channels as (mu, raw scale)."""
        N, _, h, w = phi.shape
        M = self.cfg.transform.M
        pairs = reshape(phi, (N, M, 2, h, w))
        mu = reshape(pairs[:, :, 0], (N, M, h, w))
        raw = reshape(pairs[:, :, 1], (N, M, h, w))
        return mu, scale_from_raw(raw)

    def forward_train(self, x: Tensor, rng: np.random.Generator) -> dict:
        """Training pass with the stage's quantization surrogates.

        The rate path sees additive uniform noise; the synthesis path sees
        straight-through rounding (centred on mu for the hyperprior-only model).
        """
        y = self.g_a(x)
        z = self.h_a(y)
        z_noisy = z + Tensor(rng.uniform(-0.5, 0.5, z.shape).astype(z.dtype))
        bits_z = bits(self.z_prior.likelihood(z_noisy))
        phi = self.h_s(round_ste(z))
        y_noisy = y + Tensor(rng.uniform(-0.5, 0.5, y.shape).astype(y.dtype))
        if self.tca is None:
            mu, sigma = self.hyper_params(phi)
            y_bar = round_ste(y - mu) + mu
        else:
            y_hat = round_ste(y)
            mu, sigma, r = self.tca(phi, y_hat)
            y_bar = y_hat + r
        bits_y = bits(gaussian_likelihood(y_noisy, mu, sigma))
        return {"x_hat": self.g_s(y_bar), "bits_y": bits_y, "bits_z": bits_z, "y": y}

    # ------------------------------------------------------------ inference
    def latents(self, x_padded: np.ndarray) -> Latents:
        """Deterministic inference quantities for a padded batch (N, 3, H, W)."""
        with no_grad():
            x = Tensor(np.asarray(x_padded, dtype=self._dtype()))
            y = self.g_a(x)
            z = self.h_a(y)
            z_sym = round_half_away(z.data)
            phi = self.h_s(Tensor(z_sym))
            if self.tca is None:
                mu, sigma = self.hyper_params(phi)
                y_sym = round_half_away(y.data - mu.data)
                y_hat = y_sym + mu.data
                r = np.zeros_like(y_hat)
            else:
                y_sym = round_half_away(y.data)
                y_hat = y_sym
                mu, sigma, rt = self.tca(phi, Tensor(y_hat))
                r = rt.data
        return Latents(y.data, z_sym, phi, y_sym, y_hat, mu.data, sigma.data, r)

    def synthesize(self, y_bar: np.ndarray) -> np.ndarray:
        with no_grad():
            out = self.g_s(Tensor(np.asarray(y_bar, dtype=self._dtype())))
        return np.clip(out.data, 0.0, 1.0)

    def reconstruct(self, image: np.ndarray) -> np.ndarray:
        """Direct forward pass (no coding) for one (3, H, W) image in [0, 1]."""
        padded, extents = pad_to_multiple(np.asarray(image)[None])
        lat = self.latents(padded)
        return crop_to(self.synthesize(lat.y_hat + lat.residual), extents)[0]

    def estimate_bits(self, image: np.ndarray) -> dict:
        """Model cross-entropy of the hard-quantized symbols of one image."""
        padded, _ = pad_to_multiple(np.asarray(image)[None])
        lat = self.latents(padded)
        with no_grad():
            bits_z = bits(self.z_prior.likelihood(Tensor(lat.z_symbols))).item()
            bits_y = bits(gaussian_likelihood(Tensor(lat.y_hat), Tensor(lat.mu),
                                              Tensor(lat.sigma))).item()
        return {"z": bits_z, "y": bits_y, "total": bits_z + bits_y}

    # ------------------------------------------------------------ z tables
    def z_tables(self) -> list:
        """One integer CDF table per hyper-latent channel."""
        tables = []
        radius = 64
        while True:
            points = np.arange(-radius, radius + 1) - 0.5
            cdf = self.z_prior.cdf_numpy(points)
            if np.all(cdf[:, 0] < Z_TAIL_MASS) and np.all(cdf[:, -1] > 1 - Z_TAIL_MASS):
                break
            if radius >= 4096:
                break
            radius *= 4
        for c in range(cdf.shape[0]):
            inside = np.nonzero((cdf[c, 1:] > Z_TAIL_MASS / 2) & (cdf[c, :-1] < 1 - Z_TAIL_MASS / 2))[0]
            lo, hi = (inside[0], inside[-1]) if len(inside) else (radius, radius)
            pmf = cdf[c, lo + 1:hi + 2] - cdf[c, lo:hi + 1]
            tables.append(rc.quantize_pmf(np.maximum(pmf, 0.0), int(lo) - radius))
        return tables

    # ------------------------------------------------------------ checkpoints
    def _dtype(self):
        return self.g_a.parameters()[0].dtype

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"config": self.cfg.to_dict(), "config_hash": self.cfg.config_hash().hex()}
        meta.update(extra or {})
        save_checkpoint(path, self.state_dict(), meta)


def load_model(path, strict: bool = True) -> tuple:
    """Return ``(model, meta)`` from a checkpoint written by :meth:`FatLic.save`."""
    tensors, meta = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["config"])
    model = FatLic(cfg)
    model.load_state_dict(tensors, strict=strict)
    return model, meta


# ---------------------------------------------------------------- codec
def _slice_params(model: FatLic, phi: Tensor, y_hat: np.ndarray, i: int) -> tuple:
    """(mu, sigma, r) for slice ``i`` computed from ``phi`` and the slices before it."""
    Ms = model.cfg.tca.M_s
    with no_grad():
        mu, sigma, r = model.tca(phi, Tensor(y_hat))
    sl = slice(i * Ms, (i + 1) * Ms)
    return mu.data[:, sl], sigma.data[:, sl], r.data[:, sl]


def compress(model: FatLic, image: np.ndarray) -> Bitstream:
    """Encode one (3, H, W) image with values in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"expected a (3, H, W) image, got {image.shape}")
    padded, (H, W) = pad_to_multiple(image[None])
    lat = model.latents(padded)
    cfg = model.cfg
    stream = Bitstream(H, W, cfg.lambda_index, cfg.config_hash(), cfg.entropy)
    z_idx = np.broadcast_to(np.arange(lat.z_symbols.shape[1])[None, :, None, None], lat.z_symbols.shape)
    stream.segments.append(rc.encode(lat.z_symbols, model.z_tables(), z_idx))
    if model.tca is None:
        stream.segments.append(rc.encode_gaussian(lat.y_symbols, np.zeros(lat.sigma.size), lat.sigma))
        return stream
    # slice-sequential, through the same code path the decoder uses
    Ms = cfg.tca.M_s
    partial = np.zeros_like(lat.y_hat)
    for i, sym in enumerate(slice_split(Tensor(lat.y_symbols), cfg.tca.n_s)):
        mu, sigma, _ = _slice_params(model, lat.phi, partial, i)
        stream.segments.append(rc.encode_gaussian(sym.data, mu, sigma))
        partial[:, i * Ms:(i + 1) * Ms] = sym.data
    return stream


def decompress(model: FatLic, stream: Bitstream) -> np.ndarray:
    """Decode a :class:`Bitstream` back to a (3, H, W) image in [0, 1]."""
    cfg = model.cfg
    if stream.config_hash != cfg.config_hash():
        raise ModelMismatchError(
            f"stream was written by model {stream.config_hash.hex()}, "
            f"this checkpoint is {cfg.config_hash().hex()}")
    expected = 2 if cfg.entropy == "hyperprior" else 1 + cfg.tca.n_s
    if len(stream.segments) != expected:
        raise FormatError(f"expected {expected} segments, found {len(stream.segments)}")
    Hp = -(-stream.height // PAD_MULTIPLE) * PAD_MULTIPLE
    Wp = -(-stream.width // PAD_MULTIPLE) * PAD_MULTIPLE
    if Hp == 0 or Wp == 0:
        raise FormatError("image extents must be positive")
    t = cfg.transform
    z_shape = (1, t.hyper_channels, Hp // 64, Wp // 64)
    y_shape = (1, t.M, Hp // 16, Wp // 16)
    z_idx = np.broadcast_to(np.arange(z_shape[1])[None, :, None, None], z_shape)
    z_sym = rc.decode(stream.segments[0], model.z_tables(), z_idx).reshape(z_shape)
    dtype = model._dtype()
    with no_grad():
        phi = model.h_s(Tensor(z_sym.astype(dtype)))
    if model.tca is None:
        with no_grad():
            mu, sigma = model.hyper_params(phi)
        sym = rc.decode_gaussian(stream.segments[1], np.zeros(sigma.size), sigma.data)
        y_bar = sym.reshape(y_shape).astype(dtype) + mu.data
    else:
        Ms = cfg.tca.M_s
        y_hat = np.zeros(y_shape, dtype=dtype)
        res = np.zeros(y_shape, dtype=dtype)
        for i in range(cfg.tca.n_s):
            mu, sigma, r = _slice_params(model, phi, y_hat, i)
            sym = rc.decode_gaussian(stream.segments[1 + i], mu, sigma)
            y_hat[:, i * Ms:(i + 1) * Ms] = sym.reshape(mu.shape)
            res[:, i * Ms:(i + 1) * Ms] = r
        y_bar = y_hat + res
    return crop_to(model.synthesize(y_bar), (stream.height, stream.width))[0]


def bpp(stream: Bitstream) -> float:
    """Bits per pixel of the range-coded payload."""
    return 8.0 * stream.payload_bytes / (stream.height * stream.width)
