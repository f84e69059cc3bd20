"""8-bit PNG/PPM images as (3, H, W) float32 arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

EXTENSIONS = (".png", ".ppm", ".pgm", ".pnm")


class ImageIOError(OSError):
    pass


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (FileNotFoundError, IsADirectoryError, PermissionError, UnidentifiedImageError, OSError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    return from_uint8(rgb)


def write_image(path, image: np.ndarray) -> None:
    """Write a (3, H, W) array in [0, 1]; the format follows the file extension."""
    path = Path(path)
    if path.suffix.lower() not in EXTENSIONS:
        raise ImageIOError(f"unsupported image extension {path.suffix!r}")
    try:
        Image.fromarray(to_uint8(image)).save(path)
    except OSError as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc


def to_uint8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) in [0, 1] -> (H, W, 3) uint8 with round-to-nearest."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        rgb = np.repeat(rgb[..., None], 3, axis=2)
    if rgb.dtype == bool:
        rgb = rgb.astype(np.uint8) * 255
    return (rgb[..., :3].astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def list_images(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in EXTENSIONS)


def load_corpus(directory) -> list:
    paths = list_images(directory)
    if not paths:
        raise ImageIOError(f"no PNG/PPM images in {directory}")
    return [read_image(p) for p in paths]
