"""Central finite-difference oracle for the analytic gradients."""

from __future__ import annotations

import numpy as np

from . import layers as L
from .model import ModelConfig, ScalableCNN

TINY_CONFIG = dict(n_conv=2, filters=8, dense_sizes=(16,))


def _loss(model: ScalableCNN, x: np.ndarray, y: np.ndarray) -> float:
    pred = model.forward(x, train=True, update_stats=False)
    model._caches = []
    return L.bce_loss(pred, y)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def gradient_check(model: ScalableCNN, x: np.ndarray, y: np.ndarray, h: float = 1e-5,
                   max_entries: int | None = None, seed: int = 0) -> dict[str, float]:
    """Per-parameter maximum relative error between backprop and central differences.

    ``max_entries`` caps how many coordinates of each tensor are probed
    (chosen at random); ``None`` probes every coordinate.
    """
    if np.dtype(model.config.dtype) != np.float64:
        raise ValueError("gradient checks need a float64 model")
    rng = np.random.default_rng(seed)
    _, grads, _ = model.loss_and_grads(x, y, update_stats=False)
    errors = {}
    for name, param in model.params.items():
        flat = param.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.empty(idx.size)
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = _loss(model, x, y)
            flat[i] = orig - h
            down = _loss(model, x, y)
            flat[i] = orig
            numeric[k] = (up - down) / (2 * h)
        errors[name] = relative_error(grads[name].reshape(-1)[idx], numeric)
    return errors


def tiny_problem(seed: int, n_outputs: int = 1, n: int = 3, p: int = 4, batch: int = 6,
                 gate_channels: int = 4):
    """Tiny float64 model with random one-hot inputs and soft targets."""
    rng = np.random.default_rng(seed)
    out = n if n_outputs != 1 else 1
    cfg = ModelConfig(gate_channels=gate_channels, n_outputs=out, dtype="float64", **TINY_CONFIG)
    model = ScalableCNN.create(cfg, seed=seed)
    # nudge the batchnorm affine terms away from (1, 0) so their gradients are generic
    for name, v in model.params.items():
        if name.endswith(("gamma", "beta")) or name == "out.bias":
            v += 0.3 * rng.standard_normal(v.shape)
    x = np.eye(gate_channels)[rng.integers(0, gate_channels, size=(batch, n, p))]
    y = rng.uniform(0, 1, size=(batch, out))
    return model, x, y
