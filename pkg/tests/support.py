"""Shared corpus and trained-model cache for the test suite.

Training images come from scikit-image and scikit-learn sample data. The
held-out set uses ten different source images. Trained toy checkpoints are
cached under ``tests/.cache`` keyed by configuration, so only the first run
pays for training.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from fatlic.imageio import from_uint8
from fatlic.model import ModelConfig, load_model
from fatlic.training import RdConfig, model_for_stage, train

CACHE = Path(__file__).parent / ".cache"
CACHE_VERSION = 2

# criterion number -> (passed, detail); filled by test_acceptance, printed by conftest
ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> bool:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return bool(passed)

TRAIN_NAMES = ("astronaut", "coffee", "rocket", "hubble_deep_field", "immunohistochemistry",
               "camera", "brick", "grass", "gravel", "coins", "clock", "cell", "moon", "china")
HELDOUT_NAMES = ("chelsea", "flower", "retina", "colorwheel", "text", "page", "stereo_motorcycle",
                 "shepp_logan_phantom", "horse", "logo")


def _source(name: str) -> np.ndarray:
    if name in ("china", "flower"):
        from sklearn.datasets import load_sample_image

        return load_sample_image(f"{name}.jpg")
    import skimage.data

    img = getattr(skimage.data, name)()
    if isinstance(img, tuple):  # stereo pairs: keep the left view
        img = img[0]
    if img.dtype != np.uint8 and img.dtype != bool:
        img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return img


def train_images() -> list:
    return [from_uint8(_source(n)) for n in TRAIN_NAMES]


def heldout_images(size: int = 128) -> list:
    """Centre crops (at most ``size`` square) of images never used for training."""
    out = []
    for name in HELDOUT_NAMES:
        img = from_uint8(_source(name))
        _, H, W = img.shape
        h, w = min(H, size), min(W, size)
        i, j = (H - h) // 2, (W - w) // 2
        out.append(img[:, i:i + h, j:j + w].copy())
    return out


def natural_patches(count: int, size: int, seed: int = 0) -> np.ndarray:
    """Random ``size`` square patches from the training images (large enough ones only)."""
    rng = np.random.default_rng(seed)
    pool = [im for im in train_images() if min(im.shape[1:]) >= size]
    patches = []
    for k in range(count):
        img = pool[k % len(pool)]
        _, H, W = img.shape
        i = rng.integers(H - size + 1)
        j = rng.integers(W - size + 1)
        patches.append(img[:, i:i + size, j:j + size])
    return np.stack(patches).astype(np.float32)


def _key(cfg: RdConfig, stage1: str | None = None) -> str:
    blob = {"v": CACHE_VERSION, "model": ModelConfig.toy().config_hash().hex(),
            "cfg": cfg.__dict__, "from": stage1}
    import hashlib

    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def trained_stage1(lmbda: float, steps: int = 5000, seed: int = 0, verbose: bool = False) -> tuple:
    """Return ``(checkpoint_path, log_rows)`` for a cached toy stage-1 run."""
    cfg = RdConfig(lmbda=lmbda, stage=1, steps=steps, seed=seed)
    CACHE.mkdir(exist_ok=True)
    stem = f"stage1_{lmbda}_{steps}_{_key(cfg)}"
    ckpt, log = CACHE / f"{stem}.fatw", CACHE / f"{stem}.json"
    if not (ckpt.exists() and log.exists()):
        model = model_for_stage(ModelConfig.toy(lambda_index=cfg.lambda_index), 1, seed=seed)
        t0 = time.time()

        def report(step, row, elapsed):
            if verbose and step % 250 == 0:
                print(f"lambda={lmbda} step {step} loss {row[3]:.3f} ({elapsed:.0f}s)", flush=True)

        rows = train(model, train_images(), cfg, callback=report)
        model.save(ckpt, {"stage": 1, "lambda": lmbda, "steps": steps,
                          "seconds": time.time() - t0})
        log.write_text(json.dumps({"rows": rows, "seconds": time.time() - t0}))
    data = json.loads(log.read_text())
    return ckpt, data


def load_trained(lmbda: float, steps: int = 5000):
    ckpt, data = trained_stage1(lmbda, steps)
    model, _ = load_model(ckpt)
    return model, data
