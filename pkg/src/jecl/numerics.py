"""Fully-connected layers with hand-written gradients, optimizers and a gradient checker.

Matrices are plain ``float64`` numpy arrays with samples as rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, StateError, TrainingError

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)


def as_matrix(x, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ConfigurationError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass
class LinearLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = RELU

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError(
                f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "LinearLayer":
        return LinearLayer(self.weight.copy(), self.bias.copy(), self.activation)


def init_layer(in_dim: int, out_dim: int, activation: str, rng: np.random.Generator) -> LinearLayer:
    """Uniform fan-in scaled init: He bound for ReLU layers, LeCun bound otherwise."""
    if in_dim < 1 or out_dim < 1:
        raise ConfigurationError(f"layer dims must be >= 1, got {in_dim}->{out_dim}")
    gain = 6.0 if activation == RELU else 3.0
    bound = np.sqrt(gain / in_dim)
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearLayer(weight, np.zeros(out_dim), activation)


@dataclass
class Stack:
    """A chain of linear layers; ``forward`` caches what ``backward`` needs."""

    layers: list[LinearLayer]
    _cache: list[tuple[np.ndarray, np.ndarray]] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.layers = list(self.layers)
        if not self.layers:
            raise ConfigurationError("a stack needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ConfigurationError(f"layer output {a.out_dim} does not feed input {b.in_dim}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    def copy(self) -> "Stack":
        return Stack([layer.copy() for layer in self.layers])

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without touching the cache."""
        a = as_matrix(x)
        if a.shape[1] != self.in_dim:
            raise ConfigurationError(f"input has {a.shape[1]} columns, stack expects {self.in_dim}")
        for layer in self.layers:
            a = a @ layer.weight.T + layer.bias
            if layer.activation == RELU:
                a = np.maximum(a, 0.0)
        return a

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = as_matrix(x)
        if a.shape[1] != self.in_dim:
            raise ConfigurationError(f"input has {a.shape[1]} columns, stack expects {self.in_dim}")
        cache = []
        for layer in self.layers:
            pre = a @ layer.weight.T + layer.bias
            cache.append((a, pre))
            a = np.maximum(pre, 0.0) if layer.activation == RELU else pre
        self._cache = cache
        return a

    def backward(self, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Return ``([dW0, db0, dW1, db1, ...], d_input)`` for the last forward call."""
        if self._cache is None:
            raise StateError("backward called before forward")
        grad = as_matrix(upstream, "upstream gradient")
        last_in, last_pre = self._cache[-1]
        if grad.shape != last_pre.shape:
            raise ConfigurationError(f"upstream gradient {grad.shape} != output {last_pre.shape}")
        grads: list[np.ndarray] = []
        for layer, (a_in, pre) in zip(reversed(self.layers), reversed(self._cache)):
            if layer.activation == RELU:
                grad = grad * (pre > 0.0)
            grads.append(grad.sum(axis=0))
            grads.append(grad.T @ a_in)
            grad = grad @ layer.weight
        grads.reverse()
        return grads, grad


def forward(stack: Stack | Sequence[LinearLayer], x: np.ndarray) -> np.ndarray:
    if not isinstance(stack, Stack):
        raise ConfigurationError("forward needs a Stack to hold its cache")
    return stack.forward(x)


def backward(stack: Stack, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    return stack.backward(upstream)


class Optimizer:
    """In-place first-order optimizer over a fixed list of parameter arrays."""

    kind = "base"

    def __init__(self, learning_rate: float) -> None:
        if not learning_rate > 0:
            raise ConfigurationError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        self._buffers: list[list[np.ndarray]] | None = None

    def _check(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        if len(params) != len(grads):
            raise ConfigurationError(f"{len(params)} parameters but {len(grads)} gradients")
        for i, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ConfigurationError(f"parameter {i} has shape {p.shape}, gradient {g.shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
                raise TrainingError(f"gradient {i} (shape {g.shape}) has {bad} non-finite entries")
        if self._buffers is not None:
            shapes = [b.shape for b in self._buffers[0]]
            if shapes != [p.shape for p in params]:
                raise ConfigurationError("parameter shapes changed between optimizer steps")

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def __init__(self, learning_rate: float = 0.01, momentum: float = 0.9) -> None:
        super().__init__(learning_rate)
        if not 0.0 <= momentum < 1.0:
            raise ConfigurationError(f"momentum must be in [0, 1), got {momentum}")
        self.momentum = float(momentum)

    def step(self, params, grads) -> None:
        self._check(params, grads)
        if self._buffers is None:
            self._buffers = [[np.zeros_like(p) for p in params]]
        for p, g, v in zip(params, grads, self._buffers[0]):
            v *= self.momentum
            v -= self.learning_rate * g
            p += v


class Adam(Optimizer):
    kind = "adam"

    def __init__(
        self,
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        super().__init__(learning_rate)
        for name, b in (("beta1", beta1), ("beta2", beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1), got {b}")
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.t = 0

    def step(self, params, grads) -> None:
        self._check(params, grads)
        if self._buffers is None:
            self._buffers = [[np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params]]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, *self._buffers):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind: str, learning_rate: float, momentum: float = 0.9) -> Optimizer:
    if kind == "sgd":
        return SGD(learning_rate, momentum)
    if kind == "adam":
        return Adam(learning_rate)
    raise ConfigurationError(f"unknown optimizer {kind!r} (expected 'sgd' or 'adam')")


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x`` (``x`` is restored afterwards)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        g[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))
