"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from fatlic.tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Vector relative error ||a - n|| / max(||a||, ||n||) over the probed entries."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check(fn, tensors, seed: int = 0, h: float = 1e-5, probes: int = 24) -> float:
    """Worst relative error of d<fn(), R>/dt over ``tensors`` (float64 leaves).

    ``fn`` is re-evaluated with the leaves perturbed in place; up to ``probes``
    random coordinates of each leaf are compared.
    """
    rng = np.random.default_rng(seed)
    out = fn()
    weights = rng.normal(size=out.shape)

    def loss():
        return float(np.sum(fn().data * weights))

    for t in tensors:
        t.grad = None
    (fn() * Tensor(weights)).sum().backward()
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(probes, flat.size), replace=False)
        analytic = t.grad.reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = loss()
            flat[i] = old - h
            down = loss()
            flat[i] = old
            numeric[k] = (up - down) / (2 * h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def leaf(rng, shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(size=shape) * scale, requires_grad=True, dtype=np.float64)
