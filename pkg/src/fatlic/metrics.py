"""Image quality, rate and R-D curve comparison metrics."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import ContractError, Tensor, clip, mean, no_grad, power

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_WIN, _WIN_SIGMA = 11, 1.5
_K1, _K2 = 0.01, 0.03


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """PSNR in dB on the 8-bit scale for images in [0, 1]; identical inputs give the cap."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ContractError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    mse = np.mean(((x - x_hat) * 255.0) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(255.0 ** 2 / mse)))


def bpp(num_bytes: int, height: int, width: int) -> float:
    return 8.0 * num_bytes / (height * width)


def _gauss_window(dtype) -> np.ndarray:
    k = np.arange(_WIN, dtype=np.float64) - _WIN // 2
    g = np.exp(-(k ** 2) / (2 * _WIN_SIGMA ** 2))
    return (g / g.sum()).astype(dtype)


def _blur(x: Tensor, g: np.ndarray) -> Tensor:
    C = x.shape[1]
    wh = Tensor(np.broadcast_to(g.reshape(1, 1, 1, -1), (C, 1, 1, _WIN)).copy())
    wv = Tensor(np.broadcast_to(g.reshape(1, 1, -1, 1), (C, 1, _WIN, 1)).copy())
    return F.conv2d(F.conv2d(x, wh, groups=C), wv, groups=C)


def _ssim_terms(x: Tensor, y: Tensor, g: np.ndarray) -> tuple:
    c1, c2 = _K1 ** 2, _K2 ** 2
    mx, my = _blur(x, g), _blur(y, g)
    mx2, my2, mxy = mx * mx, my * my, mx * my
    sxx = _blur(x * x, g) - mx2
    syy = _blur(y * y, g) - my2
    sxy = _blur(x * y, g) - mxy
    cs = (sxy * 2.0 + c2) / (sxx + syy + c2)
    ssim_map = ((mxy * 2.0 + c1) / (mx2 + my2 + c1)) * cs
    return ssim_map.mean(axis=(2, 3)), cs.mean(axis=(2, 3))


def ms_ssim_tensor(x: Tensor, y: Tensor) -> Tensor:
    """Differentiable 5-scale MS-SSIM of (N, C, H, W) batches in [0, 1], averaged to a scalar.

    Gaussian window 11 / 1.5, valid filtering, 2x2 average pooling between
    scales and negative contrast terms clamped at zero.
    """
    if x.shape != y.shape or x.ndim != 4:
        raise ContractError(f"MS-SSIM needs matching NCHW batches, got {x.shape} and {y.shape}")
    levels = len(MS_SSIM_WEIGHTS)
    min_side = (_WIN - 1) * 2 ** (levels - 1)
    if min(x.shape[2:]) <= min_side:
        raise ContractError(f"MS-SSIM with {levels} scales needs sides above {min_side} px, "
                            f"got {x.shape[2]}x{x.shape[3]}")
    g = _gauss_window(x.dtype)
    factors = []
    for level in range(levels):
        ssim_val, cs = _ssim_terms(x, y, g)
        if level < levels - 1:
            factors.append(clip(cs, 0.0, None))
            x, y = F.avg_pool2(x), F.avg_pool2(y)
    factors.append(clip(ssim_val, 0.0, None))
    total = None
    for f, w in zip(factors, MS_SSIM_WEIGHTS):
        term = power(f + 1e-12, w) if w else f
        total = term if total is None else total * term
    return mean(total)


def ms_ssim(x: np.ndarray, x_hat: np.ndarray) -> float:
    """MS-SSIM of two (C, H, W) or (N, C, H, W) images in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.ndim == 3:
        x, x_hat = x[None], x_hat[None]
    with no_grad():
        return float(ms_ssim_tensor(Tensor(x), Tensor(x_hat)).item())


def _fit_curve(rates, quality) -> np.ndarray:
    return np.polyfit(quality, np.log(rates), 3)


def bd_rate(curve_a, curve_b) -> float:
    """Bjontegaard delta rate of ``curve_a`` against anchor ``curve_b`` in percent.

    Each curve is a sequence of (bpp, psnr) points. Log-rate is fitted as a
    cubic in quality and integrated over the shared quality interval; negative
    values mean ``curve_a`` needs fewer bits for the same quality.
    """
    a = np.asarray(curve_a, dtype=np.float64)
    b = np.asarray(curve_b, dtype=np.float64)
    for name, c in (("curve_a", a), ("curve_b", b)):
        if c.ndim != 2 or c.shape[1] != 2 or len(c) < 4:
            raise ContractError(f"{name} needs at least 4 (bpp, psnr) points")
        if np.any(c[:, 0] <= 0):
            raise ContractError(f"{name} has non-positive rates")
    lo = max(a[:, 1].min(), b[:, 1].min())
    hi = min(a[:, 1].max(), b[:, 1].max())
    if hi <= lo:
        raise ContractError("the two curves share no quality range")
    ia = np.polyint(_fit_curve(a[:, 0], a[:, 1]))
    ib = np.polyint(_fit_curve(b[:, 0], b[:, 1]))
    area_a = np.polyval(ia, hi) - np.polyval(ia, lo)
    area_b = np.polyval(ib, hi) - np.polyval(ib, lo)
    return float((np.exp((area_a - area_b) / (hi - lo)) - 1.0) * 100.0)
