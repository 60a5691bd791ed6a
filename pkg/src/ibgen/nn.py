"""Dense feed-forward networks with hand-written backprop, optimizers and a seeded RNG.

Everything runs in float64.  Batches are row-major: ``x`` has shape
``(batch, n_in)`` and a layer computes ``act(x @ W + b)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError

ACTIVATIONS = ("relu", "softplus", "sigmoid", "linear", "sigmoid-scaled")


class Rng:
    """Seeded PCG64 stream that can be split into named, independent substreams.

    ``Rng(7).split("train")`` always yields the same stream, on every platform,
    and is statistically independent of ``Rng(7).split("eval")``.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(_path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def split(self, label) -> "Rng":
        key = zlib.crc32(str(label).encode("utf-8"))
        return Rng(self.seed, self.path + (key,))

    def gaussian(self, shape) -> np.ndarray:
        return self.gen.standard_normal(shape)

    def uniform(self, shape) -> np.ndarray:
        return self.gen.random(shape)

    def bernoulli(self, p: np.ndarray) -> np.ndarray:
        return (self.gen.random(np.shape(p)) < p).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    return np.logaddexp(0.0, z)


def _activate(z, kind, scale):
    if kind == "linear":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softplus":
        return softplus(z)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "sigmoid-scaled":
        return scale * sigmoid(z)
    raise ValueError(f"unknown activation {kind!r}")


def _activation_grad(z, a, kind, scale):
    if kind == "linear":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "softplus":
        return sigmoid(z)
    if kind == "sigmoid":
        return a * (1.0 - a)
    if kind == "sigmoid-scaled":
        s = a / scale
        return scale * s * (1.0 - s)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# dense nets
# ---------------------------------------------------------------------------


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"
    scale: float = 1.0

    @property
    def n_in(self):
        return self.W.shape[0]

    @property
    def n_out(self):
        return self.W.shape[1]


@dataclass
class DenseNet:
    layers: list[Dense] = field(default_factory=list)

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeError(f"layer chain broken: {prev.n_out} -> {nxt.n_in}")

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}{i}.W"] = layer.W
            out[f"{prefix}{i}.b"] = layer.b
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([Dense(l.W.copy(), l.b.copy(), l.activation, l.scale) for l in self.layers])


def init_dense_net(sizes, activations, rng: Rng, scale: float = 1.0) -> DenseNet:
    """Fan-in scaled uniform init: He for relu layers, Xavier (Glorot) otherwise.

    ``activations`` has one entry per layer; a ``sigmoid-scaled`` entry is
    written ``("sigmoid-scaled", c)``.
    """
    if len(activations) != len(sizes) - 1:
        raise ShapeError("need one activation per layer")
    layers = []
    for n_in, n_out, act in zip(sizes[:-1], sizes[1:], activations):
        c = 1.0
        if isinstance(act, tuple):
            act, c = act
        if act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
        if act == "relu":
            limit = np.sqrt(6.0 / n_in)
        else:
            limit = np.sqrt(6.0 / (n_in + n_out))
        W = (2.0 * rng.uniform((n_in, n_out)) - 1.0) * limit
        layers.append(Dense(W, np.zeros(n_out), act, float(c)))
    return DenseNet(layers)


def _as_batch(x, n_in):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ShapeError(f"expected input of width {n_in}, got shape {np.shape(x)}")
    return x, single


def forward(net: DenseNet, x) -> np.ndarray:
    out, _ = forward_cached(net, x)
    return out


def forward_cached(net: DenseNet, x):
    """Forward pass that also returns what :func:`backward` needs."""
    h, single = _as_batch(x, net.n_in)
    cache = []
    for layer in net.layers:
        z = h @ layer.W + layer.b
        a = _activate(z, layer.activation, layer.scale)
        cache.append((h, z, a))
        h = a
    return (h[0] if single else h), (cache, single)


def backward(net: DenseNet, cache, grad_out):
    """Reverse pass.

    Returns ``(grads, grad_in)`` where ``grads`` is a list of ``(dW, db)`` per
    layer, summed over the batch.
    """
    layers_cache, single = cache
    g = np.asarray(grad_out, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != layers_cache[-1][2].shape:
        raise ShapeError(f"upstream gradient shape {g.shape} != output shape {layers_cache[-1][2].shape}")
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, z, a = layers_cache[i]
        dz = g * _activation_grad(z, a, layer.activation, layer.scale)
        grads[i] = (h.T @ dz, dz.sum(axis=0))
        g = dz @ layer.W.T
    return grads, (g[0] if single else g)


def net_grads_dict(grads, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for i, (dW, db) in enumerate(grads):
        out[f"{prefix}{i}.W"] = dW
        out[f"{prefix}{i}.b"] = db
    return out


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


def _check_finite(name, g):
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite gradient for parameter {name!r}", where=name)


class SGD:
    """SGD with classical momentum: ``v <- m*v - lr*g``; ``p <- p + v``."""

    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            _check_finite(name, g)
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ShapeError(f"{name}: param {p.shape} vs grad {g.shape}")
            v = self.velocity.get(name)
            if v is None:
                v = self.velocity[name] = np.zeros_like(p)
            v *= self.momentum
            v -= self.lr * g
            p += v


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            _check_finite(name, g)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ShapeError(f"{name}: param {p.shape} vs grad {g.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
