"""Reverse-mode autodiff over float64 numpy arrays.

The tape is implicit: every :class:`Tensor` produced by an operation keeps
references to its parents and a closure that pushes its gradient back to
them. :func:`backward` orders the graph topologically from a scalar loss and
walks it once in reverse. Graphs are rebuilt on every forward pass.

Also here: the dense MLP used by actors and critic, softmax helpers,
categorical sampling and an Adam optimizer.
"""

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, TrainingError
from .validation import check_rng

ACTIVATIONS = ("tanh", "relu")


def _unbroadcast(grad, shape):
    # Undo numpy broadcasting by summing over expanded axes.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "op")

    def __init__(self, data, parents=(), backward_fn=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape})"

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    # arithmetic

    def __add__(self, other):
        other = _as_tensor(other)
        out_data = self.data + other.data

        def fn(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor(out_data, (self, other), fn, "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, (self,), lambda g: self._accumulate(-g), "neg")

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data

        def fn(g):
            self._accumulate(_unbroadcast(g * b, a.shape))
            other._accumulate(_unbroadcast(g * a, b.shape))

        return Tensor(a * b, (self, other), fn, "mul")

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self.data, other.data
        if a.ndim != 2 or b.ndim != 2:
            raise DimensionError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")

        def fn(g):
            self._accumulate(g @ b.T)
            other._accumulate(a.T @ g)

        return Tensor(a @ b, (self, other), fn, "matmul")

    # elementwise

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor(y, (self,), lambda g: self._accumulate(g * (1.0 - y * y)), "tanh")

    def relu(self):
        mask = self.data > 0
        return Tensor(self.data * mask, (self,), lambda g: self._accumulate(g * mask), "relu")

    def exp(self):
        y = np.exp(self.data)
        return Tensor(y, (self,), lambda g: self._accumulate(g * y), "exp")

    def log(self):
        x = self.data
        return Tensor(np.log(x), (self,), lambda g: self._accumulate(g / x), "log")

    def square(self):
        x = self.data
        return Tensor(x * x, (self,), lambda g: self._accumulate(2.0 * g * x), "square")

    def clip(self, lo, hi):
        """Clamp to ``[lo, hi]``; the gradient is zero where the clamp is active."""
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return Tensor(np.clip(x, lo, hi), (self,), lambda g: self._accumulate(g * inside), "clip")

    # reductions and indexing

    def sum(self, axis=None):
        shape = self.data.shape

        def fn(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, shape))

        return Tensor(self.data.sum(axis=axis), (self,), fn, "sum")

    def mean(self, axis=None):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / count)

    def pick(self, index):
        """Select ``self[i, index[i]]`` for every row ``i`` of a 2-D tensor."""
        idx = np.asarray(index, dtype=np.int64)
        rows = np.arange(self.data.shape[0])
        shape = self.data.shape

        def fn(g):
            full = np.zeros(shape)
            np.add.at(full, (rows, idx), g)
            self._accumulate(full)

        return Tensor(self.data[rows, idx], (self,), fn, "pick")

    def log_softmax(self):
        """Row-wise log-softmax over the last axis."""
        y = log_softmax(self.data)
        p = np.exp(y)

        def fn(g):
            self._accumulate(g - p * g.sum(axis=-1, keepdims=True))

        return Tensor(y, (self,), fn, "log_softmax")


def minimum(a, b):
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data

    def fn(g):
        a._accumulate(_unbroadcast(g * take_a, a.data.shape))
        b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))

    return Tensor(np.where(take_a, a.data, b.data), (a, b), fn, "minimum")


def topological_order(root):
    """Nodes reachable from ``root``, parents before children."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, wrt=()):
    """Backpropagate from a scalar ``loss``.

    Returns the gradients of the tensors in ``wrt``, with zeros for any that
    have no path to the loss.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.data.shape}")
    order = topological_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in wrt]


# numpy helpers

def log_softmax(logits):
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    """Numerically stable softmax over the last axis."""
    x = np.asarray(logits, dtype=np.float64)
    if x.size == 0 or x.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs):
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(p), 0.0)
    return terms.sum(axis=-1)


def sample_categorical(probs, rng):
    """Draw indices from categorical distributions along the last axis.

    Works on a single probability vector or a 2-D stack of them. Returns the
    sampled index (or array of indices) and its log-probability. An index with
    zero probability is never returned.
    """
    p = np.asarray(probs, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    cdf = np.cumsum(p2, axis=-1)
    u = rng.random(p2.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=-1)
    # Guard against u landing past the last positive entry through rounding.
    last_positive = p2.shape[1] - 1 - np.argmax(p2[:, ::-1] > 0, axis=-1)
    idx = np.minimum(idx, last_positive)
    logp = np.log(p2[np.arange(p2.shape[0]), idx])
    if single:
        return int(idx[0]), float(logp[0])
    return idx, logp


# MLP

@dataclass
class MlpParams:
    """Weights and biases of a dense network; hidden layers share one activation."""

    weights: list
    biases: list
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError(f"layer {i}: weight {w.shape} and bias {b.shape} do not match")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise DimensionError(
                    f"layer {i}: expects {w.shape[0]} inputs but layer {i - 1} gives {self.weights[i - 1].shape[1]}"
                )

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def hidden_sizes(self):
        return self.sizes[1:-1]

    @property
    def n_inputs(self):
        return self.weights[0].shape[0]

    @property
    def n_outputs(self):
        return self.weights[-1].shape[1]

    def arrays(self):
        """Parameter arrays in a fixed order: w0, b0, w1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named_arrays(self):
        names = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            names[f"layers.{i}.weight"] = w
            names[f"layers.{i}.bias"] = b
        return names

    @classmethod
    def from_arrays(cls, arrays, activation="tanh"):
        return cls(list(arrays[0::2]), list(arrays[1::2]), activation)

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def zeros_like(self):
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases],
                         self.activation)

    def digest(self):
        h = hashlib.sha256(self.activation.encode())
        for a in self.arrays():
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def init_mlp(sizes, activation="tanh", rng=None, output_scale=1.0):
    """Uniform init in ``±1/sqrt(fan_in)``; biases start at zero.

    ``output_scale`` shrinks the last layer, which keeps a fresh policy head
    close to uniform.
    """
    rng = check_rng(rng)
    if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
        raise ValueError(f"need at least input and output sizes, all positive; got {sizes}")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        if i == len(sizes) - 2:
            bound *= output_scale
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, activation)


def _check_input(params, x):
    if x.ndim not in (1, 2) or x.shape[-1] != params.n_inputs:
        raise DimensionError(f"layer 0 expects inputs of width {params.n_inputs}, got shape {x.shape}")


def forward_mlp(params, inputs):
    """Plain numpy forward pass; accepts one input row or a batch."""
    x = np.asarray(inputs, dtype=np.float64)
    _check_input(params, x)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w + b
        if i < last:
            x = np.tanh(x) if params.activation == "tanh" else np.maximum(x, 0.0)
    return x


def trace_mlp(params, inputs):
    """Forward pass that records a graph.

    Returns the output tensor and the leaf tensors for the parameters, in
    :meth:`MlpParams.arrays` order.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    _check_input(params, x)
    leaves = [Tensor(a) for a in params.arrays()]
    h = Tensor(x)
    last = len(params.weights) - 1
    for i in range(len(params.weights)):
        h = h @ leaves[2 * i] + leaves[2 * i + 1]
        if i < last:
            h = h.tanh() if params.activation == "tanh" else h.relu()
    return h, leaves


def mlp_gradients(params, loss, leaves):
    """Backpropagate ``loss`` and package the leaf gradients like ``params``."""
    return MlpParams.from_arrays(backward(loss, leaves), params.activation)


@dataclass
class Adam:
    """Adam with bias-corrected moments; updates parameters in place."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params, grads):
        arrays = params.arrays()
        named = list(params.named_arrays())
        gs = grads.arrays()
        if len(gs) != len(arrays):
            raise DimensionError("gradients are not aligned with parameters")
        for name, p, g in zip(named, arrays, gs):
            if g.shape != p.shape:
                raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}")
        if not self.m:
            self.m = [np.zeros_like(p) for p in arrays]
            self.v = [np.zeros_like(p) for p in arrays]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(arrays, gs, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params

    def state(self):
        return copy.deepcopy((self.t, self.m, self.v))

    def load_state(self, state):
        self.t, self.m, self.v = copy.deepcopy(state)
