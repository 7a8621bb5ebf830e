"""Reverse-mode automatic differentiation on dense float64 tensors.

Every network in this package is assembled from the primitives below. The
graph is rebuilt dynamically on each forward pass: an op records its parents
and a VJP closure on the output tensor whenever gradients are enabled and at
least one input requires them. ``backward`` walks that recording once, in
reverse topological order.

Intentionally small: 2-D matmul, same-shape elementwise ops, a row-broadcast
bias add, and a handful of structural ops (concat, slicing, row repeat/pool,
conv2d). Any other shape mismatch is an error rather than a broadcast.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ParameterStore",
    "AdamConfig",
    "adam_step",
    "no_grad",
    "grad_enabled",
    "matmul",
    "affine",
    "add",
    "sub",
    "mul",
    "add_bias",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "absolute",
    "scale",
    "add_scalar",
    "concat",
    "concat_rows",
    "slice_last",
    "mean",
    "sum_all",
    "repeat_rows",
    "max_rows",
    "mean_rows",
    "conv2d",
    "global_avg_pool",
    "reshape",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for a primitive."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in this thread; forward passes become pure."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense row-major float64 value with an optional gradient record."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the named functions below are the actual primitives.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, vjp) -> Tensor:
    """Wrap an op result, recording the tape edge when gradients are live."""
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _accumulate(t: Tensor, g: np.ndarray, fresh: bool = False):
    """Add ``g`` into ``t.grad``. ``fresh`` marks g as a newly allocated
    temporary the tensor may take ownership of (skips one copy)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if fresh else np.array(g)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out_data = a.data @ b.data

    def vjp(g):
        _accumulate(a, g @ b.data.T, fresh=True)
        _accumulate(b, a.data.T @ g, fresh=True)

    return _make(out_data, (a, b), vjp)


def _elementwise_pair(name, a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")
    return a, b


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _elementwise_pair("add", a, b)

    def vjp(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _elementwise_pair("sub", a, b)

    def vjp(g):
        _accumulate(a, g)
        _accumulate(b, -g, fresh=True)

    return _make(a.data - b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _elementwise_pair("mul", a, b)

    def vjp(g):
        _accumulate(a, g * b.data, fresh=True)
        _accumulate(b, g * a.data, fresh=True)

    return _make(a.data * b.data, (a, b), vjp)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b with a row-broadcast bias; one node instead of two."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: shapes {x.shape} and {w.shape} do not conform")
    if b.data.ndim != 1 or b.shape[0] != w.shape[1]:
        raise ShapeError(f"affine: bias shape {b.shape} does not match {w.shape}")
    out_data = x.data @ w.data
    out_data += b.data[None, :]

    def vjp(g):
        _accumulate(x, g @ w.data.T, fresh=True)
        _accumulate(w, x.data.T @ g, fresh=True)
        _accumulate(b, g.sum(axis=0), fresh=True)

    return _make(out_data, (x, w, b), vjp)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias add: (n, d) + (d,). The only permitted broadcast."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {b.shape} do not conform")

    def vjp(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=0), fresh=True)

    return _make(x.data + b.data[None, :], (x, b), vjp)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    data = x.data

    def vjp(g):
        _accumulate(x, g * (data > 0.0), fresh=True)

    return _make(np.maximum(data, 0.0), (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # Split by sign for numerical stability at large |x|.
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def vjp(g):
        _accumulate(x, g * out_data * (1.0 - out_data), fresh=True)

    return _make(out_data, (x,), vjp)


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out_data = np.exp(x.data)

    def vjp(g):
        _accumulate(x, g * out_data, fresh=True)

    return _make(out_data, (x,), vjp)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def vjp(g):
        _accumulate(x, g / x.data, fresh=True)

    return _make(np.log(x.data), (x,), vjp)


def absolute(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    sign = np.sign(x.data)

    def vjp(g):
        _accumulate(x, g * sign, fresh=True)

    return _make(np.abs(x.data), (x,), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)
    c = float(c)

    def vjp(g):
        _accumulate(x, g * c, fresh=True)

    return _make(x.data * c, (x,), vjp)


def add_scalar(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)

    def vjp(g):
        _accumulate(x, g)

    return _make(x.data + float(c), (x,), vjp)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    nd = parts[0].data.ndim
    if axis not in (-1, nd - 1):
        raise ShapeError("concat: only the last axis is supported")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat: shapes {[p.shape for p in parts]} differ off the last axis")
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[..., lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), vjp)


def concat_rows(parts) -> Tensor:
    """Stack 2-D tensors along axis 0. The same tensor may appear several
    times; its gradient accumulates once per occurrence."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows: empty input list")
    width = parts[0].shape[-1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[-1] != width:
            raise ShapeError(
                f"concat_rows: shapes {[p.shape for p in parts]} do not stack")
    counts = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + counts)

    def vjp(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    if not (0 <= start < stop <= x.shape[-1]):
        raise ShapeError(f"slice_last: [{start}:{stop}] out of range for {x.shape}")

    def vjp(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        _accumulate(x, full, fresh=True)

    return _make(np.ascontiguousarray(x.data[..., start:stop]), (x,), vjp)


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size

    def vjp(g):
        _accumulate(x, np.full_like(x.data, float(g) / n), fresh=True)

    return _make(np.asarray(x.data.mean()), (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)

    def vjp(g):
        _accumulate(x, np.full_like(x.data, float(g)), fresh=True)

    return _make(np.asarray(x.data.sum()), (x,), vjp)


def repeat_rows(x: Tensor, k: int) -> Tensor:
    """(n, d) -> (n*k, d), each row repeated k times consecutively."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"repeat_rows: expected 2-D input, got {x.shape}")
    n, d = x.shape

    def vjp(g):
        _accumulate(x, g.reshape(n, k, d).sum(axis=1), fresh=True)

    return _make(np.repeat(x.data, k, axis=0), (x,), vjp)


def max_rows(x: Tensor) -> Tensor:
    """Column-wise max over rows: (n, d) -> (1, d). Gradient routes to the
    first argmax of each column."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"max_rows: expected 2-D input, got {x.shape}")
    idx = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])

    def vjp(g):
        full = np.zeros_like(x.data)
        full[idx, cols] = g[0]
        _accumulate(x, full, fresh=True)

    return _make(x.data[idx, cols][None, :], (x,), vjp)


def mean_rows(x: Tensor) -> Tensor:
    """(n, d) -> (1, d) mean over rows."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"mean_rows: expected 2-D input, got {x.shape}")
    n = x.shape[0]

    def vjp(g):
        _accumulate(x, np.repeat(g / n, n, axis=0), fresh=True)

    return _make(x.data.mean(axis=0, keepdims=True), (x,), vjp)


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")

    def vjp(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape), (x,), vjp)


def _im2col(data, kh, kw, stride, pad):
    cin, h, w = data.shape
    hp = (h + 2 * pad - kh) // stride + 1
    wp = (w + 2 * pad - kw) // stride + 1
    padded = np.pad(data, ((0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((cin, kh, kw, hp, wp), dtype=np.float64)
    for di in range(kh):
        for dj in range(kw):
            cols[:, di, dj] = padded[:, di:di + stride * hp:stride,
                                     dj:dj + stride * wp:stride]
    return cols.reshape(cin * kh * kw, hp * wp).T, hp, wp


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution: x (Cin,H,W), w (Cout,Cin,kh,kw), b (Cout,) -> (Cout,H',W')."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d: shapes {x.shape} and {w.shape} do not conform")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias shape {b.shape} does not match {w.shape}")
    cout, cin, kh, kw = w.shape
    cols, hp, wp = _im2col(x.data, kh, kw, stride, pad)  # (hp*wp, cin*kh*kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out_mat = cols @ wmat.T + b.data[None, :]
    out_data = np.ascontiguousarray(out_mat.T.reshape(cout, hp, wp))

    def vjp(g):
        g_mat = g.reshape(cout, hp * wp).T  # (hp*wp, cout)
        _accumulate(b, g_mat.sum(axis=0))
        _accumulate(w, (g_mat.T @ cols).reshape(w.shape))
        if x.requires_grad:
            dcols = (g_mat @ wmat).T.reshape(cin, kh, kw, hp, wp)
            h, wd = x.shape[1], x.shape[2]
            dpad = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
            for di in range(kh):
                for dj in range(kw):
                    dpad[:, di:di + stride * hp:stride,
                         dj:dj + stride * wp:stride] += dcols[:, di, dj]
            _accumulate(x, dpad[:, pad:pad + h, pad:pad + wd])

    return _make(out_data, (x, w, b), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """(C, H, W) -> (1, C) spatial mean."""
    x = _as_tensor(x)
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool: expected 3-D input, got {x.shape}")
    c, h, w = x.shape

    def vjp(g):
        _accumulate(x, np.broadcast_to(g[0][:, None, None] / (h * w), x.shape).copy())

    return _make(x.data.mean(axis=(1, 2))[None, :], (x,), vjp)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> int:
    """Backpropagate from a scalar loss. Gradients accumulate into ``.grad``
    of every reachable tensor with ``requires_grad``. Returns the number of
    graph nodes visited; each node is visited exactly once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return 0

    # Iterative post-order topological sort over the recorded graph.
    order = []
    seen = {id(loss)}
    stack = [(loss, iter(loss._parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            if id(parent) not in seen and parent._vjp is not None:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += np.ones_like(loss.data)

    visits = {}
    for node in reversed(order):
        visits[id(node)] = visits.get(id(node), 0) + 1
        node._vjp(node.grad)
    assert all(v == 1 for v in visits.values()), "backward revisited a tape node"
    return len(order)


# ---------------------------------------------------------------------------
# Parameters and Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


class _AdamState:
    __slots__ = ("m", "v", "t")

    def __init__(self, shape):
        self.m = np.zeros(shape, dtype=np.float64)
        self.v = np.zeros(shape, dtype=np.float64)
        self.t = 0


class ParameterStore:
    """Ordered, uniquely named trainable tensors plus their Adam state.

    Registration order is the canonical parameter order: checkpoint blobs
    and update sweeps both follow it, which keeps runs reproducible.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._adam: dict[str, _AdamState] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        tensor.requires_grad = True
        self._params[name] = tensor
        self._adam[name] = _AdamState(tensor.shape)
        return tensor

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def items(self):
        return list(self._params.items())

    def tensors(self):
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.size for t in self._params.values())


def adam_step(store: ParameterStore, cfg: AdamConfig):
    """One bias-corrected Adam update over every registered parameter.

    Gradients are left untouched; the caller zeros them between steps.
    """
    for name, p in store.items():
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        st = store._adam[name]
        st.t += 1
        g = p.grad
        st.m = cfg.beta1 * st.m + (1.0 - cfg.beta1) * g
        st.v = cfg.beta2 * st.v + (1.0 - cfg.beta2) * (g * g)
        m_hat = st.m / (1.0 - cfg.beta1 ** st.t)
        v_hat = st.v / (1.0 - cfg.beta2 ** st.t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
