"""Small reverse-mode differentiation core for fixed-topology dense networks.

A :class:`Tensor` wraps a float64 numpy array and records the operations
applied to it. Calling :meth:`Tensor.backward` walks the recorded tape in
reverse topological order and accumulates gradients into every leaf that
was created with ``requires_grad=True``.

On top of the tape sit the pieces the estimators need: dense layers,
parameter sets with a flat view, Adam with decoupled weight decay, a cosine
learning-rate schedule and a central-difference gradient checker.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised for inconsistent layer or input shapes."""


class TrainingDivergence(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def _make(self, data, parents, backward):
        parents = tuple(parents)
        if not any(p.requires_grad for p in parents):
            return Tensor(data)
        return Tensor(data, _parents=parents, _backward=backward)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != {self.data.shape}")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic ----------------------------------------------------------
    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self.data.shape, other.data.shape
        return self._make(
            self.data + other.data, (self, other),
            lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        )

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        x, y = self.data, other.data
        return self._make(
            x * y, (self, other),
            lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        x, y = self.data, other.data
        return self._make(
            x / y, (self, other),
            lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * x / (y * y), y.shape)),
        )

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, k: float):
        x = self.data
        return self._make(x**k, (self,), lambda g: (g * k * x ** (k - 1),))

    def __matmul__(self, other):
        other = _as_tensor(other)
        x, w = self.data, other.data
        return self._make(x @ w, (self, other), lambda g: (g @ w.T, x.T @ g))

    def __getitem__(self, idx):
        shape = self.data.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return self._make(self.data[idx], (self,), back)

    @property
    def T(self):
        return self._make(self.data.T, (self,), lambda g: (g.T,))

    def reshape(self, *shape):
        old = self.data.shape
        return self._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def sum(self, axis=None, keepdims=False):
        shape = self.data.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)


# elementwise functions -----------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return x._make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return x._make(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return x._make(t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return x._make(e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    d = x.data
    return x._make(np.log(d), (x,), lambda g: (g / d,))


def absolute(x: Tensor) -> Tensor:
    s = np.sign(x.data)
    return x._make(np.abs(x.data), (x,), lambda g: (g * s,))


def minimum(a: Tensor, b) -> Tensor:
    """Elementwise min, written as ``a - relu(a - b)`` so gradients stay exact."""
    return a - relu(a - b)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return tensors[0]._make(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def take_along(x: Tensor, idx: np.ndarray, axis: int) -> Tensor:
    """Gather with fixed integer indices, e.g. a sort order computed from data."""
    shape = x.data.shape

    def back(g):
        out = np.zeros(shape)
        dst = np.moveaxis(out, axis, -1)
        ii = np.moveaxis(idx, axis, -1)
        lead = np.indices(ii.shape[:-1], sparse=True)
        np.add.at(dst, (*[l[..., None] for l in lead], ii), np.moveaxis(g, axis, -1))
        return (out,)

    return x._make(np.take_along_axis(x.data, idx, axis), (x,), back)


def sparse_matmul(matrix, x: Tensor) -> Tensor:
    """``matrix @ x`` for a constant scipy sparse ``matrix``."""
    if matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"sparse operand {matrix.shape} cannot multiply {x.shape}")
    return x._make(np.asarray(matrix @ x.data), (x,), lambda g: (np.asarray(matrix.T @ g),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return x._make(s, (x,), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return x * keep


# --------------------------------------------------------------------------
# Layers and parameter sets
# --------------------------------------------------------------------------


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"


_ACTIVATIONS: dict[Activation, Callable[[Tensor], Tensor]] = {
    Activation.IDENTITY: lambda t: t,
    Activation.RELU: relu,
    Activation.TANH: tanh,
    Activation.SIGMOID: sigmoid,
}


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: Activation = Activation.RELU

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.activation = Activation(self.activation)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def glorot(cls, n_in: int, n_out: int, rng: np.random.Generator,
               activation=Activation.RELU) -> "DenseLayer":
        limit = math.sqrt(6.0 / (n_in + n_out))
        return cls(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), activation)


@dataclass
class ParamSet:
    """Named dense layers plus named auxiliary vectors, with a flat view.

    Every structural change goes through :meth:`set_flat` or the layer
    arrays themselves; ``version`` is bumped by :meth:`set_flat` so caches
    taken before an update can be detected as stale.
    """

    layers: dict[str, DenseLayer] = field(default_factory=dict)
    aux: dict[str, np.ndarray] = field(default_factory=dict)
    version: int = 0

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for name, layer in self.layers.items():
            out.append((f"{name}.weights", layer.weights))
            out.append((f"{name}.bias", layer.bias))
        for name, vec in self.aux.items():
            out.append((f"aux.{name}", vec))
        return out

    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, tuple(a.shape)) for name, a in self.arrays()]

    @property
    def size(self) -> int:
        return sum(a.size for _, a in self.arrays())

    def flat(self) -> np.ndarray:
        arrays = [a.ravel() for _, a in self.arrays()]
        return np.concatenate(arrays) if arrays else np.zeros(0)

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ShapeError(f"flat vector has length {vec.size}, expected {self.size}")
        offset = 0
        for _, a in self.arrays():
            a[...] = vec[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        self.version += 1

    def copy(self) -> "ParamSet":
        return ParamSet(
            {k: DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for k, l in self.layers.items()},
            {k: v.copy() for k, v in self.aux.items()},
            self.version,
        )

    def tensors(self) -> dict[str, Tensor]:
        """Leaf tensors sharing memory with the parameter arrays."""
        return {name: Tensor(a, requires_grad=True) for name, a in self.arrays()}

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "activations": {k: l.activation.value for k, l in self.layers.items()},
            "manifest": [[n, list(s)] for n, s in self.manifest()],
            "aux_names": list(self.aux),
            "flat_b64": base64.b64encode(self.flat().astype("<f8").tobytes()).decode("ascii"),
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "ParamSet":
        if blob.get("version") != 1:
            raise ValueError(f"unsupported parameter blob version {blob.get('version')!r}")
        flat = np.frombuffer(base64.b64decode(blob["flat_b64"]), dtype="<f8").astype(np.float64)
        shapes = {n: tuple(s) for n, s in blob["manifest"]}
        params = cls()
        for name, act in blob["activations"].items():
            w, b = shapes[f"{name}.weights"], shapes[f"{name}.bias"]
            params.layers[name] = DenseLayer(np.zeros(w), np.zeros(b), act)
        for name in blob["aux_names"]:
            params.aux[name] = np.zeros(shapes[f"aux.{name}"])
        params.set_flat(flat)
        params.version = 0
        return params


def apply_layer(layer_tensors: tuple[Tensor, Tensor], activation: Activation, x: Tensor) -> Tensor:
    w, b = layer_tensors
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match layer input {w.shape[1]}")
    return _ACTIVATIONS[Activation(activation)](x @ w.T + b)


class Graph:
    """Handle for one recorded forward pass: the leaves and the output node."""

    def __init__(self, params: ParamSet, leaves: dict[str, Tensor], output: Tensor):
        self.params = params
        self.version = params.version
        self.leaves = leaves
        self.output = output

    def layer(self, name: str) -> tuple[Tensor, Tensor]:
        return self.leaves[f"{name}.weights"], self.leaves[f"{name}.bias"]

    def gradients(self) -> np.ndarray:
        parts = []
        for name, a in self.params.arrays():
            g = self.leaves[name].grad
            parts.append(np.zeros(a.size) if g is None else g.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)


def forward(params: ParamSet, x, dropout_rate: float = 0.0,
            rng: np.random.Generator | None = None, training: bool = False):
    """Run the layers of ``params`` in order as a plain MLP.

    Dropout (inverted scaling) touches hidden activations only. Returns the
    output array and a cache to hand to :func:`backward`.
    """
    if not 0.0 <= dropout_rate < 1.0:
        raise ValueError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    x = np.asarray(x, dtype=np.float64)
    layers = list(params.layers.items())
    if not layers:
        raise ShapeError("parameter set has no layers")
    if x.shape[-1] != layers[0][1].n_in:
        raise ShapeError(f"input width {x.shape[-1]} != first layer input {layers[0][1].n_in}")
    leaves = params.tensors()
    h = Tensor(x)
    for i, (name, layer) in enumerate(layers):
        h = apply_layer((leaves[f"{name}.weights"], leaves[f"{name}.bias"]), layer.activation, h)
        if i < len(layers) - 1:
            h = dropout(h, dropout_rate, rng, training)
    cache = Graph(params, leaves, h)
    return h.data, cache


def backward(params: ParamSet, cache: Graph, grad_output) -> np.ndarray:
    """Flat parameter gradient for an upstream gradient on the cached output."""
    if cache.params is not params or cache.version != params.version:
        raise ValueError("stale cache: parameters changed since the forward pass")
    for t in cache.leaves.values():
        t.grad = None
    cache.output.backward(np.asarray(grad_output, dtype=np.float64))
    return cache.gradients()


# --------------------------------------------------------------------------
# Optimisation
# --------------------------------------------------------------------------


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    base_lr: float = 1e-3
    weight_decay: float = 1e-5
    total_steps: int = 1
    min_lr: float | None = None
    schedule_step: int = 0
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamSet, **kw) -> "OptimizerState":
        n = params.size
        return cls(np.zeros(n), np.zeros(n), **kw)

    @property
    def lr(self) -> float:
        min_lr = self.base_lr / 100.0 if self.min_lr is None else self.min_lr
        return cosine_lr(min(self.schedule_step, self.total_steps), self.total_steps,
                         self.base_lr, min_lr)

    def advance_schedule(self) -> None:
        self.schedule_step = min(self.schedule_step + 1, self.total_steps)


def adam_step(state: OptimizerState, params: ParamSet, grads: np.ndarray) -> ParamSet:
    """One Adam update with decoupled weight decay, applied in place."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.m.shape or params.size != grads.size:
        raise ShapeError("gradient, moment and parameter sizes differ")
    if not np.all(np.isfinite(grads)):
        raise TrainingDivergence("non-finite gradient")
    state.step += 1
    lr = state.lr
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    theta = params.flat()
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps) - lr * state.weight_decay * theta
    params.set_flat(theta)
    return params


# --------------------------------------------------------------------------
# Gradient checking
# --------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_checked: int
    worst_index: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(loss_fn: Callable[[ParamSet], tuple[float, np.ndarray]], params: ParamSet,
               tolerance: float = 1e-4, n_samples: int = 64, step: float = 1e-5,
               rng: np.random.Generator | None = None, refinements: int = 2) -> GradCheckReport:
    """Compare analytic gradients with central differences on a random subset.

    ``loss_fn(params)`` must return ``(loss, flat_gradient)`` and be
    deterministic. The relative error per coordinate is
    ``|a - n| / max(|a| + |n|, 1e-8)``. A coordinate that fails is retried
    with the step shrunk tenfold up to ``refinements`` times, since a ReLU or
    hinge kink closer than ``step`` spoils the difference quotient while a
    wrong gradient fails at every step. Parameters are restored on exit.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    theta0 = params.flat().copy()
    _, analytic = loss_fn(params)
    idx = rng.choice(theta0.size, size=min(n_samples, theta0.size), replace=False)

    def central(i, h):
        theta = theta0.copy()
        theta[i] += h
        params.set_flat(theta)
        up, _ = loss_fn(params)
        theta[i] -= 2 * h
        params.set_flat(theta)
        down, _ = loss_fn(params)
        return (up - down) / (2 * h)

    worst, worst_i = 0.0, -1
    try:
        for i in idx:
            h = step
            for _ in range(refinements + 1):
                numeric = central(i, h)
                err = abs(analytic[i] - numeric) / max(abs(analytic[i]) + abs(numeric), 1e-8)
                if err < tolerance:
                    break
                h /= 10.0
            if err > worst:
                worst, worst_i = err, int(i)
    finally:
        params.set_flat(theta0)
    return GradCheckReport(worst, tolerance, len(idx), worst_i)


def save_checkpoint(path, params: ParamSet, **extra) -> None:
    blob = {"params": params.to_dict(), **extra}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, indent=1, sort_keys=True)


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    params = ParamSet.from_dict(blob.pop("params"))
    return params, blob


def iter_batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterable[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
