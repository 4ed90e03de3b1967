"""Forward/backward primitives for the scalable CNN.

Feature maps are channels-last ``(B, H, W, F)`` with ``H`` the qubit axis
and ``W`` the layer axis. Every ``*_forward`` returns ``(out, cache)`` and
the matching ``*_backward`` consumes that cache.
"""

from __future__ import annotations

import numpy as np

BCE_EPS = 1e-7
BN_EPS = 1e-7

_GATHER_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _patch_index(h: int, w: int) -> np.ndarray:
    """Flat indices into the padded ``(h+2)*(w+2)`` grid, ordered (pos, dy, dx)."""
    key = (h, w)
    if key not in _GATHER_CACHE:
        ii, jj, dy, dx = np.meshgrid(np.arange(h), np.arange(w), np.arange(3), np.arange(3),
                                     indexing="ij")
        _GATHER_CACHE[key] = ((ii + dy) * (w + 2) + (jj + dx)).ravel()
    return _GATHER_CACHE[key]


def im2col3x3(x: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 patches as a ``(B*H*W, 9*C)`` matrix ordered (dy, dx, c)."""
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.take(xp.reshape(b, -1, c), _patch_index(h, w), axis=1)
    return cols.reshape(b * h * w, 9 * c)


def conv_forward(x: np.ndarray, kernel: np.ndarray):
    """Stride-1 'same' 3x3 convolution without bias. ``kernel``: ``(3, 3, C, F)``."""
    b, h, w, c = x.shape
    f = kernel.shape[-1]
    cols = im2col3x3(x)
    out = cols @ kernel.reshape(9 * c, f)
    return out.reshape(b, h, w, f), (cols, kernel)


def conv_backward(dout: np.ndarray, cache, need_dx: bool = True):
    """Kernel gradient from the cached patches; the input gradient is the
    'same' convolution of ``dout`` with the spatially flipped, transposed kernel."""
    cols, kernel = cache
    c, f = kernel.shape[2], kernel.shape[3]
    dk = (cols.T @ dout.reshape(-1, f)).reshape(kernel.shape)
    if not need_dx:
        return None, dk
    flipped = kernel.reshape(9, c, f)[::-1].transpose(0, 2, 1).reshape(9 * f, c)
    dx = im2col3x3(dout) @ flipped
    return dx.reshape(dout.shape[:3] + (c,)), dk


def dense_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None):
    out = x @ weight
    if bias is not None:
        out += bias
    return out, (x, weight)


def dense_backward(dout: np.ndarray, cache, has_bias: bool = False):
    x, weight = cache
    dw = x.T @ dout
    dx = dout @ weight.T
    db = dout.sum(axis=0) if has_bias else None
    return dx, dw, db


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, running_mean: np.ndarray,
                      running_var: np.ndarray, train: bool, momentum: float = 0.9,
                      update_stats: bool = True, eps: float = BN_EPS):
    """Per-channel normalization over every axis except the last.

    Train mode uses batch statistics (biased variance) and, when
    ``update_stats`` is set, folds them into the running estimates in place.
    """
    shape = x.shape
    x2 = x.reshape(-1, shape[-1])
    if train:
        mu = x2.mean(axis=0)
        xc = x2 - mu
        var = np.mean(xc * xc, axis=0)
        if update_stats:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu
            running_var *= momentum
            running_var += (1.0 - momentum) * var
    else:
        xc = x2 - running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    out = xhat * gamma + beta
    return out.reshape(shape), (xhat, inv_std, gamma, shape)


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, inv_std, gamma, shape = cache
    d2 = dout.reshape(-1, shape[-1])
    m = d2.shape[0]
    dgamma = np.sum(d2 * xhat, axis=0)
    dbeta = d2.sum(axis=0)
    dxhat = d2 * gamma
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))
    return dx.reshape(shape), dgamma, dbeta


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _mish_parts(x: np.ndarray):
    # tanh(softplus(x)) = n(n+2) / (n(n+2) + 2) with n = e^x; both factors
    # saturate to 1 in floating point well before x = 20
    n = np.exp(np.minimum(x, 20.0))
    t = n * (n + 2.0)
    tsp = t / (t + 2.0)
    sig = n / (n + 1.0)
    return tsp, sig


def mish(x: np.ndarray) -> np.ndarray:
    return x * _mish_parts(x)[0]


def mish_forward(x: np.ndarray):
    tsp, sig = _mish_parts(x)
    return x * tsp, (x, tsp, sig)


def mish_backward(dout: np.ndarray, cache):
    x, tsp, sig = cache
    grad = tsp * tsp
    np.subtract(1.0, grad, out=grad)
    grad *= x
    grad *= sig
    grad += tsp
    grad *= dout
    return grad


def global_max_pool_forward(x: np.ndarray):
    """Channel-wise maximum over all spatial positions: ``(B, H, W, F) -> (B, F)``.

    Ties resolve to the lowest flat position.
    """
    b, h, w, f = x.shape
    flat = x.reshape(b, h * w, f)
    idx = flat.argmax(axis=1)
    out = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]
    return out, (idx, x.shape)


def global_max_pool_backward(dout: np.ndarray, cache):
    idx, shape = cache
    b, h, w, f = shape
    dflat = np.zeros((b, h * w, f), dtype=dout.dtype)
    np.put_along_axis(dflat, idx[:, None, :], dout[:, None, :], axis=1)
    return dflat.reshape(shape)


def bce_loss(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> float:
    """Summed-over-outputs, mean-over-samples binary cross-entropy."""
    p = np.clip(pred, eps, 1.0 - eps)
    ce = target * np.log(p) + (1.0 - target) * np.log1p(-p)
    return float(-ce.sum() / pred.shape[0])


def bce_sigmoid_backward(pred: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> np.ndarray:
    """Gradient of :func:`bce_loss` with respect to the sigmoid's input.

    The sigmoid derivative cancels against the cross-entropy, leaving
    ``(pred - target) / B``; clamped predictions carry no gradient.
    """
    live = (pred > eps) & (pred < 1.0 - eps)
    return np.where(live, pred - target, 0.0) / pred.shape[0]
