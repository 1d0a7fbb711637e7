"""Dense float64 tensors, tape-based reverse-mode differentiation, Adam.

All arrays are row-major float64. Ops compute their forward value with numpy
and, when a Tape is active, record a node whose backward closure maps the
output gradient to input gradients. Backward walks the tape in reverse
recording order (a valid topological order) exactly once.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError

FINITE_CHECKS = True


class Tensor:
    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of ops for one reverse pass."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(input) into .grad of every reachable tensor."""
        if loss.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            grads = node.backward(out_grad)
            for tensor, grad in zip(node.inputs, grads):
                if grad is None:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += grad


def _record(output, inputs, backward):
    if _TAPES:
        _TAPES[-1]._nodes.append(_Node(output, inputs, backward))


def _result(op: str, arr) -> Tensor:
    if FINITE_CHECKS and not np.all(np.isfinite(arr)):
        raise NumericalError(f"{op} produced non-finite values")
    return Tensor(arr)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and arithmetic ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _result("add", a.data + b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _result("sub", a.data - b.data)
    _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _result("mul", a.data * b.data)
    _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
    )
    return out


def div(a: Tensor, b: Tensor) -> Tensor:
    out = _result("div", a.data / b.data)
    _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )
    return out


def neg(a: Tensor) -> Tensor:
    out = _result("neg", -a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def mul_const(a: Tensor, c: float) -> Tensor:
    out = _result("mul_const", a.data * c)
    _record(out, (a,), lambda g: (g * c,))
    return out


def add_const(a: Tensor, c) -> Tensor:
    out = _result("add_const", a.data + c)
    _record(out, (a,), lambda g: (_unbroadcast(g, a.data.shape),))
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = _result("relu", np.where(mask, a.data, 0.0))
    _record(out, (a,), lambda g: (g * mask,))
    return out


def _sigmoid_kernel(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_kernel(a.data)
    out = _result("sigmoid", y)
    _record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _result("tanh", y)
    _record(out, (a,), lambda g: (g * (1.0 - y * y),))
    return out


def softplus(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    out = _result("softplus", y)
    _record(out, (a,), lambda g: (g * _sigmoid_kernel(a.data),))
    return out


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    out = _result("exp", y)
    _record(out, (a,), lambda g: (g * y,))
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericalError("log of a non-positive value; clip first")
    out = _result("log", np.log(a.data))
    _record(out, (a,), lambda g: (g / a.data,))
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through unclamped entries."""
    mask = (a.data > lo) & (a.data < hi)
    out = _result("clip", np.clip(a.data, lo, hi))
    _record(out, (a,), lambda g: (g * mask,))
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = _result("matmul", a.data @ b.data)
    _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T.copy())
    _record(out, (a,), lambda g: (g.T,))
    return out


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(orig),))
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty tensor list")
    arrays = [t.data for t in tensors]
    out = _result("concat", np.concatenate(arrays, axis=axis))
    sizes = [arr.shape[axis] for arr in arrays]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    _record(out, tuple(tensors), backward)
    return out


def sum_over_axis(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _result("sum", a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, shape).copy(),)

    _record(out, (a,), backward)
    return out


def mean_over_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    n = a.data.shape[axis]
    out = _result("mean", a.data.mean(axis=axis, keepdims=keepdims))
    shape = a.data.shape

    def backward(g):
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, shape) / n,)

    _record(out, (a,), backward)
    return out


def max_over_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Hard max; gradient flows to the first argmax along the axis."""
    out = _result("max", a.data.max(axis=axis, keepdims=keepdims))
    idx = np.argmax(a.data, axis=axis)

    def backward(g):
        g_exp = g if keepdims else np.expand_dims(g, axis)
        gx = np.zeros_like(a.data)
        np.put_along_axis(gx, np.expand_dims(idx, axis), g_exp, axis=axis)
        return (gx,)

    _record(out, (a,), backward)
    return out


def _softmax_kernel(x, axis):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_over_axis(a: Tensor, axis: int = -1) -> Tensor:
    y = _softmax_kernel(a.data, axis)
    out = _result("softmax", y)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    _record(out, (a,), backward)
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if a.data.shape[-1] != gain.data.shape[-1] or a.data.shape[-1] != bias.data.shape[-1]:
        raise ShapeError(
            f"layer_norm: feature dim {a.data.shape[-1]} vs gain {gain.data.shape} / bias {bias.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = _result("layer_norm", xhat * gain.data + bias.data)
    n = a.data.shape[-1]

    def backward(g):
        gy = g * gain.data
        term = gy - gy.mean(axis=-1, keepdims=True) - xhat * (gy * xhat).mean(axis=-1, keepdims=True)
        ga = inv * term
        ggain = (g * xhat).reshape(-1, n).sum(axis=0)
        gbias = g.reshape(-1, n).sum(axis=0)
        return (ga, ggain, gbias)

    _record(out, (a, gain, bias), backward)
    return out


def conv1d(a: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-padded 1-D convolution over a (length, channels_in) sequence.

    w has shape (width, channels_in, channels_out) with odd width; output
    length equals input length.
    """
    if a.data.ndim != 2 or w.data.ndim != 3 or a.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv1d: input {a.data.shape} vs weight {w.data.shape}")
    width = w.data.shape[0]
    if width % 2 != 1:
        raise ShapeError(f"conv1d requires an odd width, got {width}")
    n, c_in = a.data.shape
    c_out = w.data.shape[2]
    pad = width // 2
    xp = np.zeros((n + 2 * pad, c_in))
    xp[pad : pad + n] = a.data
    y = np.broadcast_to(b.data, (n, c_out)).copy()
    for d in range(width):
        y += xp[d : d + n] @ w.data[d]
    out = _result("conv1d", y)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for d in range(width):
            gxp[d : d + n] += g @ w.data[d].T
            gw[d] = xp[d : d + n].T @ g
        return (gxp[pad : pad + n], gw, g.sum(axis=0))

    _record(out, (a, w, b), backward)
    return out


# ---------------------------------------------------------------------------
# gather ops


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Row gather from a (rows, dim) table; gradient scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(table.data[idx])

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    _record(out, (table,), backward)
    return out


take_rows = embedding_lookup


def take_flat(a: Tensor, flat_indices) -> Tensor:
    """Gather arbitrary elements by flat index into a vector."""
    idx = np.asarray(flat_indices, dtype=np.int64)
    out = Tensor(a.data.reshape(-1)[idx])
    shape = a.data.shape

    def backward(g):
        ga = np.zeros(a.data.size)
        np.add.at(ga, idx, g)
        return (ga.reshape(shape),)

    _record(out, (a,), backward)
    return out


def dropout(a: Tensor, keep_prob: float, mode: str, rng=None) -> Tensor:
    """Inverted dropout: retained units are scaled by 1/keep_prob in train mode."""
    if not 0.0 < keep_prob <= 1.0:
        raise ShapeError(f"dropout keep_prob must be in (0, 1], got {keep_prob}")
    if mode == "eval" or keep_prob == 1.0:
        return a
    if mode != "train":
        raise ShapeError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ShapeError("dropout in train mode requires an rng")
    mask = (rng.random(a.data.shape) < keep_prob) / keep_prob
    out = _result("dropout", a.data * mask)
    _record(out, (a,), lambda g: (g * mask,))
    return out


# ---------------------------------------------------------------------------
# parameters and optimizer


class Parameter:
    """Named leaf tensor with a persistent gradient accumulator."""

    def __init__(self, name: str, data):
        self.name = name
        self.value = Tensor(data)
        self.value.grad = np.zeros_like(self.value.data)

    @property
    def data(self):
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    def zero_grad(self):
        self.value.grad = np.zeros_like(self.value.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.data.shape})"


class ParameterSet:
    """Insertion-ordered collection of Parameters, keyed by name."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, data) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def num_scalars(self) -> int:
        return sum(p.data.size for p in self)


def glorot_uniform(shape, rng) -> np.ndarray:
    fan_in = int(np.prod(shape[:-1]))
    fan_out = int(shape[-1])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, lr: float = 1e-3, **kwargs) -> "AdamState":
        state = cls(lr=lr, **kwargs)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: ParameterSet, state: AdamState) -> None:
    """One Adam update with bias correction, reading Parameter gradients."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / (1.0 - b1**state.t)
        v_hat = state.v[name] / (1.0 - b2**state.t)
        p.data[...] -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint IO: versioned binary container of (name, shape, data) triples
# plus optimizer state; byte-exact round-trip

_MAGIC = b"DGCK"
_VERSION = 1


def _write_array(f, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    f.write(struct.pack("<B", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(arr.tobytes())


def _read_array(f):
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(shape)
    return data.astype(np.float64)


def save_checkpoint(path, params: ParameterSet, adam: AdamState | None = None) -> None:
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            _write_array(f, p.data)
        f.write(struct.pack("<B", 1 if adam is not None else 0))
        if adam is not None:
            f.write(struct.pack("<Q", adam.t))
            f.write(struct.pack("<4d", adam.lr, adam.beta1, adam.beta2, adam.eps))
            for name, _ in params.items():
                _write_array(f, adam.m[name])
                _write_array(f, adam.v[name])


def load_checkpoint(path) -> tuple[ParameterSet, AdamState | None]:
    from .errors import DataError

    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise DataError(f"{path}: incompatible checkpoint version {version}")
        (n_params,) = struct.unpack("<I", f.read(4))
        params = ParameterSet()
        for _ in range(n_params):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            params.add(name, _read_array(f))
        (has_adam,) = struct.unpack("<B", f.read(1))
        adam = None
        if has_adam:
            (t,) = struct.unpack("<Q", f.read(8))
            lr, beta1, beta2, eps = struct.unpack("<4d", f.read(32))
            adam = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=t)
            for name in params.names():
                adam.m[name] = _read_array(f)
                adam.v[name] = _read_array(f)
    return params, adam
