"""Small feed-forward network engine on numpy arrays.

Dense layers with LeakyReLU / Sigmoid / Identity activations, manual
backpropagation (parameter gradients *and* gradients with respect to the
network input), binary cross-entropy, Adam, and a versioned checkpoint format.

Batches are 2-D float64 arrays of shape ``(n_rows, n_features)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError, StateError

#: Sigmoid outputs are clamped to ``[CLAMP, 1 - CLAMP]`` so ``log D`` stays finite.
CLAMP = 1e-7

IDENTITY = "identity"
SIGMOID = "sigmoid"
LEAKY_RELU = "leaky_relu"
_ACTIVATIONS = (IDENTITY, SIGMOID, LEAKY_RELU)

CHECKPOINT_FORMAT = "ipman-mlp"
CHECKPOINT_VERSION = 1


def as_batch(x) -> np.ndarray:
    """Return ``x`` as a float64 2-D array; a 1-D vector becomes a single row."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"expected a 1-D or 2-D array, got shape {arr.shape}")
    return arr


def make_rng(seed) -> np.random.Generator:
    """Seeded random stream (PCG64). Identical seeds give identical draws."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _sigmoid(a):
    # split on sign to avoid overflow in exp
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


@dataclass
class Dense:
    """Affine map ``x @ weight + bias`` followed by an elementwise activation."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = IDENTITY
    slope: float = 0.2

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[1]:
            raise ShapeError(
                f"weight {self.weight.shape} and bias {self.bias.shape} do not agree"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    def activate(self, pre: np.ndarray) -> np.ndarray:
        if self.activation == LEAKY_RELU:
            return np.where(pre >= 0, pre, self.slope * pre)
        if self.activation == SIGMOID:
            return np.clip(_sigmoid(pre), CLAMP, 1.0 - CLAMP)
        return pre

    def activation_grad(self, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
        if self.activation == LEAKY_RELU:
            return np.where(pre >= 0, 1.0, self.slope)
        if self.activation == SIGMOID:
            # Evaluated at the clamped output: the clamp is transparent to backward,
            # so saturated units still pass a (small, non-zero) gradient.
            return out * (1.0 - out)
        return np.ones_like(pre)


class Mlp:
    """Feed-forward network: a chain of :class:`Dense` layers.

    ``forward`` caches what ``backward`` needs; ``backward`` fills
    :attr:`grads` (same order as :attr:`params`) and returns the gradient with
    respect to the input batch.
    """

    def __init__(self, layers: list[Dense]):
        if not layers:
            raise ValueError("an Mlp needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].fan_out != layers[k + 1].fan_in:
                raise ShapeError(
                    f"layer {k} outputs {layers[k].fan_out} but layer {k + 1} "
                    f"expects {layers[k + 1].fan_in}"
                )
        self.layers = layers
        self.grads = [np.zeros_like(p) for p in self.params]
        self._cache = None

    @classmethod
    def build(cls, sizes, activations, rng, slope=0.2) -> "Mlp":
        """He-style scaled-uniform init: ``W ~ U(-a, a)``, ``a = sqrt(6 / fan_in)``.

        Args:
            sizes: layer widths including input and output, e.g. ``[2, 64, 1]``.
            activations: one activation name per layer (``len(sizes) - 1``).
            rng: seed or ``np.random.Generator``.
        """
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        rng = make_rng(rng)
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            layers.append(Dense(w, np.zeros(fan_out), act, slope))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_dim(self) -> int:
        return self.layers[-1].fan_out

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            [Dense(l.weight.copy(), l.bias.copy(), l.activation, l.slope) for l in self.layers]
        )

    def forward(self, batch) -> np.ndarray:
        x = as_batch(batch)
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"batch has {x.shape[1]} columns, network expects {self.input_dim}")
        cache = []
        for layer in self.layers:
            pre = x @ layer.weight + layer.bias
            out = layer.activate(pre)
            cache.append((x, pre, out))
            x = out
        self._cache = cache
        return x

    __call__ = forward

    def predict(self, batch) -> np.ndarray:
        """Forward pass that leaves the backward cache untouched (safe on shared nets)."""
        x = as_batch(batch)
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"batch has {x.shape[1]} columns, network expects {self.input_dim}")
        for layer in self.layers:
            x = layer.activate(x @ layer.weight + layer.bias)
        return x

    def backward(self, upstream) -> np.ndarray:
        if self._cache is None:
            raise StateError("backward called before forward")
        g = np.asarray(upstream, dtype=np.float64)
        last_out = self._cache[-1][2]
        if g.shape != last_out.shape:
            raise ShapeError(f"upstream gradient {g.shape} does not match output {last_out.shape}")
        grads = []
        for layer, (x_in, pre, out) in zip(reversed(self.layers), reversed(self._cache)):
            g = g * layer.activation_grad(pre, out)
            grads.append((layer.bias.shape, g.sum(axis=0)))
            grads.append((layer.weight.shape, x_in.T @ g))
            g = g @ layer.weight.T
        self.grads = [arr for _, arr in reversed(grads)]
        return g


def bce_loss(predictions, labels):
    """Mean binary cross-entropy and its gradient with respect to ``predictions``.

    Predictions are clamped to ``[CLAMP, 1 - CLAMP]`` first.

    Returns:
        ``(loss, grad)`` with ``grad`` shaped like ``predictions``.
    """
    p = np.clip(np.asarray(predictions, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != p.shape:
        y = np.broadcast_to(y, p.shape)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (-y / p + (1.0 - y) / (1.0 - p)) / n
    return float(loss), grad


@dataclass
class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays (updated in place)."""

    params: list
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon_hat: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    def __post_init__(self):
        if not self.first_moment:
            self.first_moment = [np.zeros_like(p) for p in self.params]
            self.second_moment = [np.zeros_like(p) for p in self.params]

    def step(self, grads) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, grads):
            if p.shape != np.shape(g):
                raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(self.params, grads, self.first_moment, self.second_moment):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon_hat)


def adam_step(state: Adam, params, grads):
    """Functional spelling of :meth:`Adam.step`; ``params`` must be the tracked arrays."""
    if len(params) != len(state.params) or any(a is not b for a, b in zip(params, state.params)):
        raise ShapeError("params are not the arrays tracked by this Adam state")
    state.step(grads)
    return params


# -- checkpoints ------------------------------------------------------------
#
# A checkpoint is an uncompressed ``.npz`` archive.  Entry ``header`` holds a
# JSON document::
#
#     {"format": "ipman-mlp", "version": 1,
#      "networks": {name: [{"activation": ..., "slope": ...}, ...]},
#      "meta": {...}}
#
# and each parameter is stored as ``{name}/{layer}/weight`` and
# ``{name}/{layer}/bias`` (float64).  Arrays round-trip bit-exactly.


def save_checkpoint(path, networks: dict[str, Mlp], meta: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "networks": {
            name: [{"activation": l.activation, "slope": l.slope} for l in net.layers]
            for name, net in networks.items()
        },
        "meta": meta or {},
    }
    arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
    for name, net in networks.items():
        for k, layer in enumerate(net.layers):
            arrays[f"{name}/{k}/weight"] = layer.weight
            arrays[f"{name}/{k}/bias"] = layer.bias
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(networks, meta)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: not an ipman checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        networks = {}
        for name, specs in header["networks"].items():
            layers = [
                Dense(data[f"{name}/{k}/weight"], data[f"{name}/{k}/bias"], s["activation"], s["slope"])
                for k, s in enumerate(specs)
            ]
            networks[name] = Mlp(layers)
    return networks, header["meta"]
