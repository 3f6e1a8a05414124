"""
DeskMT: Tensor Core
===================
Dense n-dimensional tensors over numpy with reverse-mode automatic
differentiation.

Every operation that involves a tensor with ``requires_grad`` records its
parents and a backward closure. ``backward(loss)`` collects the recorded
operations reachable from the loss into a ``Tape`` and replays them in
reverse recording order, so each input receives its gradient once per use.

Precision is float32 by default; ``precision(np.float64)`` switches the
default for gradient checks. Dropout and noise draw from counter-based
``RandomStreams`` so a run is a pure function of its seed.

Author: DeskMT Team
Date: 2026-02-03
"""

import itertools
import threading
import zlib
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ConfigurationError, ContractError, DeskIndexError, DimensionError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_local = threading.local()
_seq = itertools.count()


def get_default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype.kind != "f":
        raise ConfigurationError(f"default dtype must be floating, got {dtype}")
    _local.dtype = dtype


@contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default float dtype (e.g. float64 for gradient checks)."""
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _local.dtype = previous


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable operation recording in the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class Tensor:
    """
    N-dimensional array with optional gradient participation.

    ``data`` is a C-contiguous numpy array; ``grad`` has the same shape once
    a backward pass has reached the tensor.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None,
                 name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or get_default_dtype(), order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._seq = next(_seq)

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Tuple["Tensor", ...],
                 backward: BackwardFn) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, order="C")
        out.grad = None
        out.name = None
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._seq = next(_seq)
        return out

    # --- convenience ---
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{req}{nm})"

    # --- operators ---
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def tanh(self): return tanh(self)
    def sigmoid(self): return sigmoid(self)
    def relu(self): return relu(self)


class Parameter(Tensor):
    """Trainable leaf tensor. ``frozen`` parameters still pass gradients but are not updated."""

    def __init__(self, data: ArrayLike, dtype=None, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.frozen = False


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# ------------------------------
# Elementwise ops
# ------------------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return Tensor._from_op(a.data + b.data, (a, b), _bw)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return Tensor._from_op(a.data - b.data, (a, b), _bw)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return Tensor._from_op(a.data * b.data, (a, b), _bw)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def _bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return Tensor._from_op(a.data / b.data, (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    def _bw(g):
        return (g * exponent * a.data ** (exponent - 1),)
    return Tensor._from_op(a.data ** exponent, (a,), _bw)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor._from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    keep = a.data > 0
    return Tensor._from_op(a.data * keep, (a,), lambda g: (g * keep,))


def masked_fill(a: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where ``mask`` is True by ``value``; those entries get no gradient."""
    mask = np.asarray(mask, dtype=bool)
    out = np.where(mask, np.asarray(value, dtype=a.dtype), a.data)
    return Tensor._from_op(out, (a,), lambda g: (_unbroadcast(np.where(mask, 0, g), a.shape),))


# ------------------------------
# Matrix product
# ------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Batched matrix product a[..., m, k] @ b[..., k, n].

    Raises:
        DimensionError: inner dimensions differ or batch dimensions do not broadcast
    """
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch dimensions do not broadcast: {a.shape} @ {b.shape}")

    def _bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.ndim == 2:
            # weight matrix: fold batch dims instead of broadcasting b
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return Tensor._from_op(a.data @ b.data, (a, b), _bw)


# ------------------------------
# Reductions
# ------------------------------
def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)
    return Tensor._from_op(out, (a,), _bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def cumsum(a: Tensor, axis: int) -> Tensor:
    def _bw(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)
    return Tensor._from_op(np.cumsum(a.data, axis=axis), (a,), _bw)


# ------------------------------
# Movement ops
# ------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return Tensor._from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a: Tensor, index) -> Tensor:
    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return Tensor._from_op(a.data[index], (a,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise DimensionError(f"concat shape mismatch: {tensors[0].shape} vs {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))
    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def split(a: Tensor, sections: int, axis: int = -1) -> List[Tensor]:
    size = a.shape[axis]
    if size % sections:
        raise DimensionError(f"cannot split axis of size {size} into {sections} parts")
    step = size // sections
    axis = axis % a.ndim
    parts = []
    for i in range(sections):
        index = [slice(None)] * a.ndim
        index[axis] = slice(i * step, (i + 1) * step)
        parts.append(getitem(a, tuple(index)))
    return parts


# ------------------------------
# Normalization and probabilities
# ------------------------------
def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Max-subtracted softmax along ``axis``.

    ``mask`` (broadcastable, True = hidden) pins hidden entries to exactly
    zero weight; a slice whose entries are all hidden comes out as zeros.
    """
    z = x.data if mask is None else np.where(mask, -np.inf, x.data)
    with np.errstate(invalid="ignore", over="ignore"):
        peak = np.max(z, axis=axis, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0)
        e = np.exp(z - peak)
        total = e.sum(axis=axis, keepdims=True)
    out = e / np.where(total == 0, 1, total)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return Tensor._from_op(out, (x,), _bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    peak = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - peak
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def _bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return Tensor._from_op(out, (x,), _bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """
    Normalize over the last dimension to zero mean and unit variance, then
    apply ``gain * y + bias``.
    """
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError(f"layer_norm over empty last dimension: {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        return dx, dgain, dbias
    return Tensor._from_op(out, (x, gain, bias), _bw)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Zero entries with probability ``p`` and rescale survivors by 1/(1-p) in training."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - p))
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """
    Gather rows of ``table`` [V, d] for integer ``ids`` of any shape.

    Raises:
        DeskIndexError: an id is negative or >= V
    """
    ids = np.asarray(ids)
    vocab = table.shape[0]
    bad = np.argwhere((ids < 0) | (ids >= vocab))
    if bad.size:
        position = tuple(int(i) for i in bad[0])
        raise DeskIndexError(
            f"token id {int(ids[position])} at position {position} outside vocabulary of size {vocab}")

    def _bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)
    return Tensor._from_op(table.data[ids], (table,), _bw)


# ------------------------------
# Reverse pass
# ------------------------------
class Tape:
    """
    Ordered record of the operations reachable from a root tensor.

    Nodes are kept in reverse recording order; since every operation is
    recorded after its inputs, this is a valid reverse topological order.
    """

    def __init__(self, root: Tensor):
        seen: Dict[int, Tensor] = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen or not node.requires_grad:
                continue
            seen[id(node)] = node
            stack.extend(node._parents)
        self.nodes: List[Tensor] = sorted(seen.values(), key=lambda n: n._seq, reverse=True)
        self.root = root

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self, seed: np.ndarray) -> None:
        pending: Dict[int, np.ndarray] = {id(self.root): seed}
        for node in self.nodes:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = np.array(g, dtype=node.dtype) if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def backward(loss: Tensor) -> None:
    """
    Populate ``grad`` on every requires_grad ancestor of a scalar ``loss``.

    Gradients accumulate across calls until they are reset.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    Tape(loss).replay(np.ones_like(loss.data))


# ------------------------------
# Random streams
# ------------------------------
class RandomStream:
    """Counter-based stream: the k-th draw uses Philox keyed by (seed, stream id, k)."""

    def __init__(self, seed: int, stream_id: int, counter: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = int(counter)

    def generator(self) -> np.random.Generator:
        bitgen = np.random.Philox(np.random.SeedSequence([self.seed, self.stream_id, self.counter]))
        self.counter += 1
        return np.random.Generator(bitgen)


class RandomStreams:
    """Named random streams derived from one global seed."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._streams: Dict[str, RandomStream] = {}

    def stream(self, name: str) -> RandomStream:
        if name not in self._streams:
            self._streams[name] = RandomStream(self.seed, zlib.crc32(name.encode("utf-8")))
        return self._streams[name]

    def generator(self, name: str) -> np.random.Generator:
        return self.stream(name).generator()

    def state_dict(self) -> Dict[str, int]:
        return {name: s.counter for name, s in sorted(self._streams.items())}

    def load_state_dict(self, counters: Dict[str, int]) -> None:
        for name, counter in counters.items():
            self.stream(name).counter = int(counter)
