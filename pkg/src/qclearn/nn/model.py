"""Scalable convolutional network with a global max-pool bridge.

Layout: ``[conv3x3 -> batchnorm -> mish] * n_conv -> global max pool ->
[dense -> batchnorm -> mish] * len(dense_sizes) -> dense(n_outputs) ->
sigmoid``. Because the pool collapses the spatial axes, a single-output
model accepts circuits of any ``N x P``.

Convolutions and hidden dense layers carry no bias: the batchnorm offset
that follows plays that role.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from ..errors import ShapeMismatch
from . import layers as L


@dataclass(frozen=True)
class ModelConfig:
    n_conv: int = 10
    filters: int = 32
    kernel: tuple[int, int] = (3, 3)
    dense_sizes: tuple[int, ...] = (128, 64, 32)
    n_outputs: int = 1
    gate_channels: int = 4
    bn_momentum: float = 0.9
    dtype: str = "float64"

    def __post_init__(self):
        if tuple(self.kernel) != (3, 3):
            raise ValueError("only 3x3 kernels are implemented")
        if self.gate_channels not in (4, 5):
            raise ValueError("gate_channels must be 4 or 5")
        if self.n_conv < 1 or self.filters < 1 or self.n_outputs < 1:
            raise ValueError("n_conv, filters and n_outputs must be positive")
        object.__setattr__(self, "kernel", tuple(self.kernel))
        object.__setattr__(self, "dense_sizes", tuple(int(d) for d in self.dense_sizes))

    @property
    def scalable(self) -> bool:
        return self.n_outputs == 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["kernel"] = list(self.kernel)
        d["dense_sizes"] = list(self.dense_sizes)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def parameter_names(cfg: ModelConfig) -> list[str]:
    names = []
    for i in range(cfg.n_conv):
        names += [f"conv{i}.kernel", f"conv{i}.bn.gamma", f"conv{i}.bn.beta"]
    for i in range(len(cfg.dense_sizes)):
        names += [f"dense{i}.weight", f"dense{i}.bn.gamma", f"dense{i}.bn.beta"]
    names += ["out.weight", "out.bias"]
    return names


@dataclass
class ScalableCNN:
    config: ModelConfig
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    _caches: list = field(default_factory=list, repr=False)

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0) -> "ScalableCNN":
        """He-normal initialization from each layer's fan-in."""
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype)
        params: dict[str, np.ndarray] = {}
        buffers: dict[str, np.ndarray] = {}
        c_in = config.gate_channels
        for i in range(config.n_conv):
            f = config.filters
            std = np.sqrt(2.0 / (9 * c_in))
            params[f"conv{i}.kernel"] = (rng.standard_normal((3, 3, c_in, f)) * std).astype(dt)
            params[f"conv{i}.bn.gamma"] = np.ones(f, dtype=dt)
            params[f"conv{i}.bn.beta"] = np.zeros(f, dtype=dt)
            buffers[f"conv{i}.bn.running_mean"] = np.zeros(f, dtype=dt)
            buffers[f"conv{i}.bn.running_var"] = np.ones(f, dtype=dt)
            c_in = f
        d_in = config.filters
        for i, d in enumerate(config.dense_sizes):
            params[f"dense{i}.weight"] = (rng.standard_normal((d_in, d)) * np.sqrt(2.0 / d_in)).astype(dt)
            params[f"dense{i}.bn.gamma"] = np.ones(d, dtype=dt)
            params[f"dense{i}.bn.beta"] = np.zeros(d, dtype=dt)
            buffers[f"dense{i}.bn.running_mean"] = np.zeros(d, dtype=dt)
            buffers[f"dense{i}.bn.running_var"] = np.ones(d, dtype=dt)
            d_in = d
        params["out.weight"] = (rng.standard_normal((d_in, config.n_outputs))
                                * np.sqrt(2.0 / d_in)).astype(dt)
        params["out.bias"] = np.zeros(config.n_outputs, dtype=dt)
        return cls(config, params, buffers)

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "ScalableCNN":
        return ScalableCNN(self.config, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def state(self) -> tuple[dict, dict]:
        return ({k: v.copy() for k, v in self.params.items()},
                {k: v.copy() for k, v in self.buffers.items()})

    def load_state(self, state: tuple[dict, dict]) -> None:
        params, buffers = state
        for k, v in params.items():
            self.params[k][...] = v
        for k, v in buffers.items():
            self.buffers[k][...] = v

    def check_input(self, x: np.ndarray) -> None:
        cfg = self.config
        if x.ndim != 4:
            raise ShapeMismatch(f"expected a (B, N, P, C) batch, got shape {x.shape}")
        if x.shape[3] != cfg.gate_channels:
            raise ShapeMismatch(f"model expects {cfg.gate_channels} gate channels, got {x.shape[3]}")
        if not cfg.scalable and x.shape[1] != cfg.n_outputs:
            raise ShapeMismatch(
                f"multi-output model is fixed to N={cfg.n_outputs} qubits, got N={x.shape[1]}")
        if x.shape[0] < 1 or x.shape[1] < 1 or x.shape[2] < 1:
            raise ShapeMismatch(f"empty input shape {x.shape}")

    # -- forward / backward ---------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False, update_stats: bool = True,
                params: dict | None = None, buffers: dict | None = None, dtype=None) -> np.ndarray:
        """Predictions in (0, 1), shape ``(B, n_outputs)``.

        In train mode the intermediate caches needed by :meth:`backward` are
        kept on the instance.
        """
        self.check_input(x)
        cfg = self.config
        p = self.params if params is None else params
        buf = self.buffers if buffers is None else buffers
        dt = np.dtype(dtype or cfg.dtype)
        h = np.asarray(x, dtype=dt)
        caches = []
        mom = cfg.bn_momentum
        for i in range(cfg.n_conv):
            h, c_conv = L.conv_forward(h, p[f"conv{i}.kernel"])
            h, c_bn = L.batchnorm_forward(h, p[f"conv{i}.bn.gamma"], p[f"conv{i}.bn.beta"],
                                          buf[f"conv{i}.bn.running_mean"],
                                          buf[f"conv{i}.bn.running_var"],
                                          train, mom, update_stats)
            h, c_act = L.mish_forward(h)
            if train:
                caches.append((c_conv, c_bn, c_act))
            del c_conv, c_bn, c_act
        h, c_pool = L.global_max_pool_forward(h)
        if train:
            caches.append(c_pool)
        for i in range(len(cfg.dense_sizes)):
            h, c_fc = L.dense_forward(h, p[f"dense{i}.weight"])
            h, c_bn = L.batchnorm_forward(h, p[f"dense{i}.bn.gamma"], p[f"dense{i}.bn.beta"],
                                          buf[f"dense{i}.bn.running_mean"],
                                          buf[f"dense{i}.bn.running_var"],
                                          train, mom, update_stats)
            h, c_act = L.mish_forward(h)
            if train:
                caches.append((c_fc, c_bn, c_act))
        logits, c_out = L.dense_forward(h, p["out.weight"], p["out.bias"])
        if train:
            caches.append(c_out)
            self._caches = caches
        return L.sigmoid(logits)

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of every parameter given the loss gradient at the logits."""
        if not self._caches:
            raise RuntimeError("backward() needs a preceding forward(train=True)")
        cfg = self.config
        caches = self._caches
        grads: dict[str, np.ndarray] = {}
        n_dense = len(cfg.dense_sizes)
        dh, grads["out.weight"], grads["out.bias"] = L.dense_backward(dlogits, caches[-1], has_bias=True)
        for i in reversed(range(n_dense)):
            c_fc, c_bn, c_act = caches[cfg.n_conv + 1 + i]
            dh = L.mish_backward(dh, c_act)
            dh, grads[f"dense{i}.bn.gamma"], grads[f"dense{i}.bn.beta"] = L.batchnorm_backward(dh, c_bn)
            dh, grads[f"dense{i}.weight"], _ = L.dense_backward(dh, c_fc)
        dh = L.global_max_pool_backward(dh, caches[cfg.n_conv])
        for i in reversed(range(cfg.n_conv)):
            c_conv, c_bn, c_act = caches[i]
            dh = L.mish_backward(dh, c_act)
            dh, grads[f"conv{i}.bn.gamma"], grads[f"conv{i}.bn.beta"] = L.batchnorm_backward(dh, c_bn)
            dh, grads[f"conv{i}.kernel"] = L.conv_backward(dh, c_conv, need_dx=i > 0)
        self._caches = []
        return {k: grads[k] for k in self.params}

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, update_stats: bool = True):
        """Train-mode forward, BCE and full backward pass on one batch."""
        pred = self.forward(x, train=True, update_stats=update_stats)
        y = np.asarray(y, dtype=pred.dtype).reshape(pred.shape)
        loss = L.bce_loss(pred, y)
        grads = self.backward(L.bce_sigmoid_backward(pred, y))
        return loss, grads, pred

    def predict(self, x: np.ndarray, batch_size: int = 256, dtype=None) -> np.ndarray:
        """Inference-mode predictions using running batchnorm statistics.

        ``dtype="float32"`` runs a reduced-precision copy of the weights.
        """
        self.check_input(x)
        dt = np.dtype(dtype or self.config.dtype)
        params, buffers = self.params, self.buffers
        if dt != np.dtype(self.config.dtype):
            params = {k: v.astype(dt) for k, v in params.items()}
            buffers = {k: v.astype(dt) for k, v in buffers.items()}
        out = np.empty((x.shape[0], self.config.n_outputs), dtype=np.float64)
        step = max(1, int(batch_size))
        for start in range(0, x.shape[0], step):
            out[start:start + step] = self.forward(x[start:start + step], train=False,
                                                   params=params, buffers=buffers, dtype=dt)
        return out

    def summary(self) -> str:
        return json.dumps({"config": self.config.to_json(), "parameters": self.n_parameters()})


def iter_batches(n: int, batch_size: int, rng: np.random.Generator | None) -> Iterable[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
