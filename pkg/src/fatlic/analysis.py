"""Frequency analyses of trained transforms, exported as plain CSV grids.

Two views are provided: the block spectrum of each FDWA attention group's
output in the last FAT block of g_a and g_s, and the learned FMFFN filter
magnitudes of the FAT block nearest the latent in each transform.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .attention import KINDS
from .fft import fft2
from .model import FatLic
from .tensor import Tensor, no_grad
from .transforms import pad_to_multiple

BLOCK = 16


def last_fat_block(model: FatLic, transform: str):
    """The last FAT block applied inside ``g_a`` or ``g_s``."""
    pairs = {"g_a": model.g_a, "g_s": model.g_s}[transform].fat_pairs()
    return pairs[-1].blocks[-1]


def deepest_fat_block(model: FatLic, transform: str):
    """The FAT block adjacent to the latent: last in g_a, first in g_s."""
    if transform == "g_a":
        return model.g_a.fat_pairs()[-1].blocks[-1]
    return model.g_s.fat_pairs()[0].blocks[0]


def block_spectrum(maps: np.ndarray, block: int = BLOCK) -> np.ndarray:
    """Mean |FFT| over all ``block`` tiles: (N, C, H, W) -> (C, block, block), DC centred."""
    N, C, H, W = maps.shape
    H2, W2 = H - H % block, W - W % block
    tiles = maps[:, :, :H2, :W2].reshape(N, C, H2 // block, block, W2 // block, block)
    tiles = tiles.transpose(0, 1, 2, 4, 3, 5).astype(np.float64)
    mag = np.abs(fft2(tiles))
    return np.fft.fftshift(mag.mean(axis=(0, 2, 3)), axes=(-2, -1))


def central_fraction(grid: np.ndarray) -> float:
    """Share of spectral energy (|F|^2) in the central low-frequency quarter, mean over channels."""
    B = grid.shape[-1]
    q = B // 4
    energy = grid ** 2
    centre = energy[..., B // 2 - q:B // 2 + q, B // 2 - q:B // 2 + q].sum(axis=(-2, -1))
    return float(np.mean(centre / energy.sum(axis=(-2, -1))))


def axis_ratio(grid: np.ndarray) -> float:
    """Energy with |f_x| > |f_y| over energy with |f_y| > |f_x|, mean over channels.

    Values above 1 mean horizontal frequencies dominate.
    """
    B = grid.shape[-1]
    f = np.arange(B) - B // 2
    fy, fx = np.meshgrid(f, f, indexing="ij")
    energy = grid ** 2
    horiz = energy[..., np.abs(fx) > np.abs(fy)].sum(axis=-1)
    vert = energy[..., np.abs(fy) > np.abs(fx)].sum(axis=-1)
    return float(np.mean(horiz / vert))


def outer_ring_mask(B: int = BLOCK) -> np.ndarray:
    """Cells of a DC-centred grid outside the central quarter used by :func:`central_fraction`."""
    q = B // 4
    inside = np.zeros(B, dtype=bool)
    inside[B // 2 - q:B // 2 + q] = True
    return ~np.logical_and.outer(inside, inside)


def capture_spectra(model: FatLic, patches: np.ndarray) -> dict:
    """{transform: {kind: (C_group, 16, 16) mean magnitude}} over ``patches`` (N, 3, H, W)."""
    blocks = {t: last_fat_block(model, t) for t in ("g_a", "g_s")}
    sums = {t: {k: None for k in KINDS} for t in blocks}
    for b in blocks.values():
        b.attn.capture = True
    try:
        for patch in patches:
            padded, _ = pad_to_multiple(patch[None])
            lat = model.latents(padded)
            with no_grad():
                model.g_s(Tensor(lat.y_hat + lat.residual))
            for t, b in blocks.items():
                for kind in KINDS:
                    spec = block_spectrum(b.attn.captured[kind])
                    sums[t][kind] = spec if sums[t][kind] is None else sums[t][kind] + spec
    finally:
        for b in blocks.values():
            b.attn.capture = False
            b.attn.captured = {}
    return {t: {k: v / len(patches) for k, v in d.items()} for t, d in sums.items()}


def spectrum_summary(spectra: dict) -> list:
    rows = []
    for t, groups in spectra.items():
        for kind, grid in groups.items():
            rows.append({"transform": t, "group": kind, "central_fraction": central_fraction(grid),
                         "axis_ratio": axis_ratio(grid)})
    return rows


def write_spectra(spectra: dict, out_dir) -> list:
    """One CSV per (transform, group): rows are channels, 256 shifted magnitudes each."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, groups in spectra.items():
        for kind, grid in groups.items():
            path = out_dir / f"spectrum_{t}_{kind}.csv"
            _write_grid(path, grid)
            paths.append(path)
    with open(out_dir / "spectrum_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["transform", "group", "central_fraction", "axis_ratio"])
        w.writeheader()
        for row in spectrum_summary(spectra):
            w.writerow(row)
    paths.append(out_dir / "spectrum_summary.csv")
    return paths


def filter_grids(model: FatLic) -> dict:
    """{transform: (C, 16, 16)} DC-centred |W| of the FAT block nearest the latent."""
    return {t: deepest_fat_block(model, t).ffn.filter_magnitude() for t in ("g_a", "g_s")}


def outer_ring_mean(grid: np.ndarray) -> float:
    return float(grid[..., outer_ring_mask(grid.shape[-1])].mean())


def write_filters(model: FatLic, out_dir) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, grid in filter_grids(model).items():
        path = out_dir / f"filters_{t}.csv"
        _write_grid(path, grid)
        paths.append(path)
    return paths


def _write_grid(path: Path, grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for channel in grid:
            w.writerow([f"{v:.8g}" for v in channel.reshape(-1)])


def read_grid(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows])
    B = int(round(np.sqrt(data.shape[1])))
    return data.reshape(len(rows), B, B)
