"""Minimal dense neural-network stack with analytic backpropagation.

Supports exactly what the discriminator/generator architectures need:
linear layers, optional batch normalization, ReLU / LeakyReLU / sigmoid
activations, Kaiming-uniform init, BCE and generator losses, SGD and
Adam with decoupled weight decay.  Everything runs in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1  # running-statistics update rate

ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "none")

SCHEMA_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Signals a non-finite loss during training."""


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str = "relu"
    slope: float = 0.2       # leaky-relu negative slope
    batchnorm: bool = False
    bias: bool = True

    def __post_init__(self):
        if self.in_width < 1 or self.out_width < 1:
            raise ValueError("layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError("unknown activation %r" % self.activation)


@dataclass
class TrainConfig:
    optimizer: str = "adam"   # "adam" | "sgd"
    lr: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0


def _gain(spec: LayerSpec) -> float:
    if spec.activation == "relu":
        return np.sqrt(2.0)
    if spec.activation == "leaky_relu":
        return np.sqrt(2.0 / (1.0 + spec.slope ** 2))
    return 1.0


class MlpModel:
    """Ordered dense layers; parameters live in ``self.layers`` dicts."""

    def __init__(self, specs, layers):
        for a, b in zip(specs, specs[1:]):
            if a.out_width != b.in_width:
                raise ValueError(
                    "layer widths do not chain: %d -> %d" % (a.out_width, b.in_width)
                )
        self.specs = list(specs)
        self.layers = layers  # list of dicts of np arrays

    @property
    def in_width(self) -> int:
        return self.specs[0].in_width

    @property
    def out_width(self) -> int:
        return self.specs[-1].out_width

    def parameter_count(self) -> int:
        n = 0
        for layer in self.layers:
            for key in ("W", "b", "gamma", "beta"):
                if layer.get(key) is not None:
                    n += layer[key].size
        return n

    def copy(self) -> "MlpModel":
        layers = [
            {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in layer.items()}
            for layer in self.layers
        ]
        return MlpModel(self.specs, layers)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "specs": [
                {
                    "in_width": s.in_width,
                    "out_width": s.out_width,
                    "activation": s.activation,
                    "slope": s.slope,
                    "batchnorm": s.batchnorm,
                    "bias": s.bias,
                }
                for s in self.specs
            ],
            "layers": [
                {
                    k: (v.tolist() if isinstance(v, np.ndarray) else v)
                    for k, v in layer.items()
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpModel":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ValueError("unsupported model schema version %r" % data.get("schema_version"))
        specs = [LayerSpec(**s) for s in data["specs"]]
        layers = []
        for raw in data["layers"]:
            layers.append(
                {k: (np.asarray(v, dtype=float) if v is not None else None) for k, v in raw.items()}
            )
        return cls(specs, layers)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "MlpModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_model(specs, seed) -> MlpModel:
    """Kaiming-uniform weights over fan-in, zero biases, identity batchnorm."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for spec in specs:
        bound = _gain(spec) * np.sqrt(6.0 / spec.in_width)
        layer = {
            "W": rng.uniform(-bound, bound, size=(spec.out_width, spec.in_width)),
            "b": np.zeros(spec.out_width) if spec.bias else None,
        }
        if spec.batchnorm:
            layer["gamma"] = np.ones(spec.out_width)
            layer["beta"] = np.zeros(spec.out_width)
            layer["run_mean"] = np.zeros(spec.out_width)
            layer["run_var"] = np.ones(spec.out_width)
        else:
            layer["gamma"] = layer["beta"] = layer["run_mean"] = layer["run_var"] = None
        layers.append(layer)
    return MlpModel(specs, layers)


def _activate(spec: LayerSpec, z):
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    if spec.activation == "leaky_relu":
        return np.where(z >= 0.0, z, spec.slope * z)
    if spec.activation == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activate_grad(spec: LayerSpec, z, a):
    if spec.activation == "relu":
        return (z > 0.0).astype(float)
    if spec.activation == "leaky_relu":
        return np.where(z >= 0.0, 1.0, spec.slope)
    if spec.activation == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def forward(model: MlpModel, batch, train=False, cache=None):
    """Run the layer stack; batch is (n, in_width).

    In train mode batchnorm uses batch statistics and updates the running
    averages in place; eval mode uses the stored running statistics.
    Pass a list as ``cache`` to collect per-layer intermediates for backprop.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.in_width:
        raise ValueError("batch width %d != model input %d" % (x.shape[1], model.in_width))
    for spec, layer in zip(model.specs, model.layers):
        z = x @ layer["W"].T
        if layer["b"] is not None:
            z = z + layer["b"]
        record = {"x": x, "z_lin": z}
        if spec.batchnorm:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                layer["run_mean"] *= 1.0 - _BN_MOMENTUM
                layer["run_mean"] += _BN_MOMENTUM * mu
                layer["run_var"] *= 1.0 - _BN_MOMENTUM
                layer["run_var"] += _BN_MOMENTUM * var
            else:
                mu, var = layer["run_mean"], layer["run_var"]
            inv_std = 1.0 / np.sqrt(var + _BN_EPS)
            zhat = (z - mu) * inv_std
            z = layer["gamma"] * zhat + layer["beta"]
            record.update({"zhat": zhat, "inv_std": inv_std, "bn_train": train})
        a = _activate(spec, z)
        record.update({"z": z, "a": a})
        if cache is not None:
            cache.append(record)
        x = a
    return x


def backward(model: MlpModel, cache, dout):
    """Backpropagate dLoss/dOutput through a cached forward pass.

    Returns (grads, dinput); grads mirrors model.layers with keys
    W, b, gamma, beta (None where absent).
    """
    grads = [None] * len(model.layers)
    d = np.asarray(dout, dtype=float)
    for idx in range(len(model.layers) - 1, -1, -1):
        spec, layer, rec = model.specs[idx], model.layers[idx], cache[idx]
        d = d * _activate_grad(spec, rec["z"], rec["a"])
        g = {"W": None, "b": None, "gamma": None, "beta": None}
        if spec.batchnorm:
            zhat = rec["zhat"]
            g["gamma"] = (d * zhat).sum(axis=0)
            g["beta"] = d.sum(axis=0)
            dzhat = d * layer["gamma"]
            if rec["bn_train"]:
                n = d.shape[0]
                d = (
                    rec["inv_std"]
                    / n
                    * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))
                )
            else:
                d = dzhat * rec["inv_std"]
        x = rec["x"]
        g["W"] = d.T @ x
        if layer["b"] is not None:
            g["b"] = d.sum(axis=0)
        grads[idx] = g
        d = d @ layer["W"]
    return grads, d


# -- losses ------------------------------------------------------------------

def bce_loss(p, targets):
    """Mean binary cross entropy and its gradient w.r.t. p."""
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    y = np.asarray(targets, dtype=float).reshape(p.shape)
    loss = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    dp = (p - y) / (p * (1.0 - p)) / p.size
    return loss, dp


def generator_loss(p, nonsaturating=False):
    """Mean log(1 - p) (or -log p for the nonsaturating form) and gradient."""
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    if nonsaturating:
        loss = float(-np.mean(np.log(p)))
        dp = -1.0 / (p * p.size)
    else:
        loss = float(np.mean(np.log(1.0 - p)))
        dp = -1.0 / ((1.0 - p) * p.size)
    return loss, dp


def grad(model: MlpModel, batch, loss: str, targets=None, train=False, nonsaturating=False):
    """Loss value plus analytic gradients of the mean loss for every parameter."""
    cache = []
    p = forward(model, batch, train=train, cache=cache)
    if loss == "bce":
        value, dp = bce_loss(p, targets)
    elif loss == "generator":
        value, dp = generator_loss(p, nonsaturating=nonsaturating)
    else:
        raise ValueError("unknown loss %r" % loss)
    if not np.isfinite(value):
        raise TrainingDiverged("non-finite loss")
    grads, dinput = backward(model, cache, dp)
    return value, grads, dinput


# -- optimizers ---------------------------------------------------------------

_PARAM_KEYS = ("W", "b", "gamma", "beta")


class SgdOptimizer:
    def __init__(self, lr):
        self.lr = lr

    def step(self, model: MlpModel, grads):
        for layer, g in zip(model.layers, grads):
            for key in _PARAM_KEYS:
                if layer.get(key) is not None and g.get(key) is not None:
                    layer[key] -= self.lr * g[key]


class AdamOptimizer:
    """Adam with decoupled weight decay applied to weight matrices only."""

    def __init__(self, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, model: MlpModel, grads):
        if self.m is None:
            self.m = [
                {k: np.zeros_like(layer[k]) for k in _PARAM_KEYS if layer.get(k) is not None}
                for layer in model.layers
            ]
            self.v = [
                {k: np.zeros_like(layer[k]) for k in _PARAM_KEYS if layer.get(k) is not None}
                for layer in model.layers
            ]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for layer, g, m, v in zip(model.layers, grads, self.m, self.v):
            for key in _PARAM_KEYS:
                if layer.get(key) is None or g.get(key) is None:
                    continue
                m[key] = self.beta1 * m[key] + (1.0 - self.beta1) * g[key]
                v[key] = self.beta2 * v[key] + (1.0 - self.beta2) * g[key] ** 2
                update = (m[key] / bc1) / (np.sqrt(v[key] / bc2) + self.eps)
                layer[key] -= self.lr * update
                if key == "W" and self.weight_decay:
                    layer[key] -= self.lr * self.weight_decay * layer[key]


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SgdOptimizer(cfg.lr)
    if cfg.optimizer == "adam":
        return AdamOptimizer(cfg.lr, weight_decay=cfg.weight_decay)
    raise ValueError("unknown optimizer %r" % cfg.optimizer)
