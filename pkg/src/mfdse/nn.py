"""A small dense-network engine: ReLU MLPs with hand-written reverse mode,
Adam, MSE and Gaussian KL losses, and reparameterised sampling.

Everything runs in float64.  Hidden layers use ReLU, the last layer is
linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "mfdse-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = 0

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "NetworkParams":
        """Glorot-uniform weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def arrays(self) -> list[np.ndarray]:
        """Parameters in optimizer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def check(self):
        for w_in, w_out in zip(self.weights[:-1], self.weights[1:]):
            if w_in.shape[1] != w_out.shape[0]:
                raise ValueError("layer shapes do not chain")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[1],):
                raise ValueError("bias shape does not match weight")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise FloatingPointError("non-finite parameter")

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "sizes": self.sizes,
            "layers": [
                {"W": w.ravel().tolist(), "b": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NetworkParams":
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a network checkpoint")
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
        sizes = obj["sizes"]
        weights, biases = [], []
        for (fan_in, fan_out), layer in zip(zip(sizes[:-1], sizes[1:]), obj["layers"]):
            weights.append(np.asarray(layer["W"], dtype=np.float64).reshape(fan_in, fan_out))
            biases.append(np.asarray(layer["b"], dtype=np.float64))
        params = cls(weights, biases)
        params.check()
        return params


def save_params(params: NetworkParams, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(params.to_dict()), encoding="utf-8")
    return path


def load_params(path) -> NetworkParams:
    return NetworkParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class Cache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations
    params_id: int
    version: int


def forward(params: NetworkParams, x: np.ndarray):
    """Return ``(outputs, cache)`` for a batch ``x`` of shape ``(n, in)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"expected input of width {params.weights[0].shape[0]}, got {x.shape}")
    inputs, pre = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    if not np.isfinite(h).all():
        raise FloatingPointError("non-finite network output")
    return h, Cache(inputs, pre, id(params), params.version)


def predict(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    return forward(params, x)[0]


def backward(params: NetworkParams, cache: Cache, grad_out: np.ndarray):
    """Gradients of ``sum(grad_out * outputs)``.

    Returns ``(grads, grad_input)`` where ``grads`` follows
    :attr:`NetworkParams.arrays` order.
    """
    if cache.params_id != id(params) or cache.version != params.version:
        raise ValueError("stale forward cache: parameters changed since forward()")
    g = np.asarray(grad_out, dtype=np.float64)
    grads: list[np.ndarray] = []
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        if i != last:
            g = g * (cache.pre[i] > 0)
        grads.append(g.sum(axis=0))
        grads.append(cache.inputs[i].T @ g)
        g = g @ params.weights[i].T
    grads.reverse()
    return grads, g


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_arrays(cls, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        return cls(
            [np.zeros_like(a) for a in arrays],
            [np.zeros_like(a) for a in arrays],
            lr,
            beta1,
            beta2,
            eps,
        )


def adam_step(arrays, grads, state: AdamState):
    """One in-place Adam descent step on ``arrays``; returns ``(arrays, state)``.

    ``arrays`` may be a :class:`NetworkParams` (its version is bumped).
    """
    owner = arrays if isinstance(arrays, NetworkParams) else None
    targets = owner.arrays if owner is not None else list(arrays)
    if len(targets) != len(grads) or len(targets) != len(state.m):
        raise ValueError("parameter, gradient and state lists differ in length")
    for p, g in zip(targets, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(targets, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if owner is not None:
        owner.version += 1
    return arrays, state


# ---------------------------------------------------------------------------
# losses


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def gaussian_kl(mu, logvar) -> float:
    """KL( N(mu, diag(exp(logvar))) || N(0, I) )."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar differ in shape")
    if not (np.isfinite(mu).all() and np.isfinite(logvar).all()):
        raise FloatingPointError("non-finite KL input")
    return float(0.5 * np.sum(np.exp(logvar) + mu**2 - 1.0 - logvar))


def gaussian_kl_batch(mu: np.ndarray, logvar: np.ndarray):
    """Batch-mean KL and gradients w.r.t. ``mu`` and ``logvar``."""
    n = mu.shape[0]
    value = gaussian_kl(mu, logvar) / n
    return value, mu / n, 0.5 * (np.exp(logvar) - 1.0) / n


def reparameterize(mu, logvar, rng: np.random.Generator):
    """Draw ``mu + exp(logvar / 2) * eps``; returns ``(z, eps)``."""
    mu = np.asarray(mu, dtype=np.float64)
    eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * np.asarray(logvar)) * eps, eps


@dataclass
class MiniBatches:
    """Seeded shuffled minibatch index generator."""

    n: int
    batch_size: int = 256
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __iter__(self):
        perm = self.rng.permutation(self.n)
        for start in range(0, self.n, self.batch_size):
            yield perm[start : start + self.batch_size]
