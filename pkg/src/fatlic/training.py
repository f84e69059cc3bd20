"""Rate-distortion objective, optimizer and the three-stage training schedule."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import ms_ssim_tensor
from .model import MSE_LAMBDAS, FatLic, ModelConfig, load_model
from .tensor import ConfigurationError, Tensor, mean, no_grad, round_ste

MS_SSIM_LAMBDAS = (2.40, 4.58, 8.73, 16.64, 31.73, 60.50)
METRICS = ("mse", "ms-ssim")


@dataclass(frozen=True)
class RdConfig:
    lmbda: float = 0.0130
    metric: str = "mse"
    stage: int = 1
    steps: int = 5000
    batch: int = 2
    crop: int = 64
    lr: float = 1e-4
    seed: int = 0
    clip_norm: float = 1.0
    log_every: int = 10

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}")
        allowed = MSE_LAMBDAS if self.metric == "mse" else MS_SSIM_LAMBDAS
        if not any(np.isclose(self.lmbda, a) for a in allowed):
            raise ConfigurationError(f"lambda {self.lmbda} is not in the {self.metric} set {allowed}")
        if self.stage not in (1, 2, 3):
            raise ConfigurationError("stage must be 1, 2 or 3")
        if self.crop % 64:
            raise ConfigurationError("crop size must be a multiple of 64")

    @property
    def lambda_index(self) -> int:
        allowed = MSE_LAMBDAS if self.metric == "mse" else MS_SSIM_LAMBDAS
        return int(np.argmin([abs(self.lmbda - a) for a in allowed]))

    @classmethod
    def for_stage(cls, stage: int, **overrides) -> "RdConfig":
        """Desk-scale defaults: 5k / 3k / 1k steps, the last at lr 1e-5 on larger crops."""
        base = {1: dict(steps=5000), 2: dict(steps=3000),
                3: dict(steps=1000, lr=1e-5, crop=128)}[stage]
        base.update(overrides)
        return cls(stage=stage, **base)


# ---------------------------------------------------------------- surrogates and loss
def quantize_train(y: Tensor, mu: Tensor | None = None, mode: str = "ste",
                   rng: np.random.Generator | None = None) -> Tensor:
    """Training-time quantization.

    ``mode="noise"`` adds U(-0.5, 0.5) (the rate path); ``mode="ste"`` rounds
    in the forward pass with an identity gradient (the synthesis path). With
    ``mu`` given, STE rounding is centred: round(y - mu) + mu.
    """
    if mode == "noise":
        rng = rng if rng is not None else np.random.default_rng()
        return y + Tensor(rng.uniform(-0.5, 0.5, y.shape).astype(y.dtype))
    if mode != "ste":
        raise ConfigurationError(f"unknown quantization mode {mode!r}")
    if mu is None:
        return round_ste(y)
    return round_ste(y - mu) + mu


def distortion(x: Tensor, x_hat: Tensor, metric: str = "mse") -> Tensor:
    if metric == "mse":
        d = (x - x_hat) * 255.0
        return mean(d * d)
    if metric == "ms-ssim":
        return 1.0 - ms_ssim_tensor(x, x_hat)
    raise ConfigurationError(f"unknown metric {metric!r}")


def rd_loss(x: Tensor, x_hat: Tensor, bits_y: Tensor, bits_z: Tensor, lmbda: float,
            metric: str = "mse") -> dict:
    """R + lambda * D with the rate in bits per pixel of ``x``."""
    N, _, H, W = x.shape
    rate = (bits_y + bits_z) * (1.0 / (N * H * W))
    dist = distortion(x, x_hat, metric)
    return {"loss": rate + dist * lmbda, "bpp": rate, "distortion": dist}


# ---------------------------------------------------------------- optimizer
class Adam:
    """Adam without weight decay."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm and total > max_norm:
        scale = max_norm / (total + 1e-6)
        for g in grads:
            g *= scale
    return total


# ---------------------------------------------------------------- data
def random_crops(images: list, count: int, crop: int, rng: np.random.Generator,
                 flip: bool = True) -> np.ndarray:
    """``count`` random (3, crop, crop) patches as a float32 batch in [0, 1]."""
    out = np.empty((count, 3, crop, crop), dtype=np.float32)
    for k in range(count):
        img = images[rng.integers(len(images))]
        _, H, W = img.shape
        if H < crop or W < crop:
            raise ConfigurationError(f"image {H}x{W} is smaller than the {crop}px crop")
        i = rng.integers(H - crop + 1)
        j = rng.integers(W - crop + 1)
        patch = img[:, i:i + crop, j:j + crop]
        if flip and rng.random() < 0.5:
            patch = patch[:, :, ::-1]
        out[k] = patch
    return out


# ---------------------------------------------------------------- stages
def model_for_stage(model_cfg: ModelConfig, stage: int, init_checkpoint=None, seed: int = 0) -> FatLic:
    """Stage 1 builds a fresh hyperprior model; stages 2 and 3 need an earlier checkpoint.

    Stage 2 keeps every stage-1 weight (transforms, hyper transforms and the
    hyper-latent prior) and attaches a freshly initialized T-CA.
    """
    if stage == 1:
        if init_checkpoint is not None:
            model, _ = load_model(init_checkpoint)
            return model
        return FatLic(model_cfg.with_entropy("hyperprior"), seed=seed)
    if init_checkpoint is None or not Path(init_checkpoint).exists():
        raise ConfigurationError(f"stage {stage} needs an existing checkpoint, got {init_checkpoint}")
    previous, meta = load_model(init_checkpoint)
    if stage == 3:
        if previous.tca is None:
            raise ConfigurationError("stage 3 fine-tunes a T-CA model; load a stage-2 checkpoint")
        return previous
    model = FatLic(previous.cfg.with_entropy("tca"), seed=seed + 1)
    missing = model.load_state_dict(previous.state_dict(), strict=False)
    if any(not name.startswith("tca.") for name in missing):
        raise ConfigurationError(f"stage-1 checkpoint lacks weights: {missing}")
    return model


def evaluate_batch(model: FatLic, x: np.ndarray, lmbda: float, metric: str = "mse") -> dict:
    """Hard-quantized R-D terms of a batch (no noise), for warm-start and held-out checks."""
    from .priors import bits, gaussian_likelihood

    lat = model.latents(x)
    with no_grad():
        x_hat = Tensor(model.synthesize(lat.y_hat + lat.residual))
        bz = bits(model.z_prior.likelihood(Tensor(lat.z_symbols)))
        by = bits(gaussian_likelihood(Tensor(lat.y_hat), Tensor(lat.mu), Tensor(lat.sigma)))
        out = rd_loss(Tensor(x), x_hat, by, bz, lmbda, metric)
    return {k: v.item() for k, v in out.items()}


def train(model: FatLic, images: list, cfg: RdConfig, log_path=None, callback=None) -> list:
    """Optimize ``model`` in place; returns the per-step log rows."""
    rng = np.random.default_rng(cfg.seed)
    noise_rng = np.random.default_rng(cfg.seed + 1_000_003)
    opt = Adam(model.parameters(), lr=cfg.lr)
    rows = []
    writer = None
    handle = None
    if log_path is not None:
        handle = open(log_path, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(["step", "bpp_est", "distortion", "loss"])
    start = time.time()
    try:
        for step in range(1, cfg.steps + 1):
            x = Tensor(random_crops(images, cfg.batch, cfg.crop, rng))
            out = model.forward_train(x, noise_rng)
            terms = rd_loss(x, out["x_hat"], out["bits_y"], out["bits_z"], cfg.lmbda, cfg.metric)
            model.zero_grad()
            terms["loss"].backward()
            clip_grad_norm(opt.params, cfg.clip_norm)
            opt.step()
            row = (step, terms["bpp"].item(), terms["distortion"].item(), terms["loss"].item())
            rows.append(row)
            if writer is not None and (step % cfg.log_every == 0 or step == cfg.steps):
                writer.writerow([row[0], f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}"])
            if callback is not None:
                callback(step, row, time.time() - start)
    finally:
        if handle is not None:
            handle.close()
    return rows


def moving_average(values, window: int = 100) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")
