"""
DeskMT: Neural Building Blocks
==============================
Module base class and the layers the Transformer and its variants are made
of: positional embedding, linear/layer-norm/dropout wrappers, position-wise
feed-forward, multi-head self and cross attention, average attention, the
residue combiner used by hierarchical aggregation, an LSTM cell for the
recurrent decoder, and the Gaussian noiser.

Author: DeskMT Team
Date: 2026-02-04
"""

import math
import threading
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigurationError, ContractError, DimensionError
from logging_config import get_logger
from tensor import (
    Parameter, RandomStream, Tensor, concat, cumsum, dropout, layer_norm,
    matmul, relu, sigmoid, softmax, split, tanh, transpose,
)

logger = get_logger("deskmt.modules")


# ------------------------------
# Module base
# ------------------------------
class Module:
    """Container of parameters and sub-modules, discovered from attributes."""

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        """Yield (dotted name, parameter); a tied parameter is reported once, under its first name."""
        seen = set()
        for mod_name, module in self.named_modules(prefix):
            for name, value in vars(module).items():
                if isinstance(value, Parameter) and id(value) not in seen:
                    seen.add(id(value))
                    yield (f"{mod_name}.{name}" if mod_name else name), value

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        """
        Copy arrays into parameters by name.

        Raises:
            ConfigurationError: a parameter is missing (strict) or unknown
            DimensionError: shapes differ
        """
        params = dict(self.named_parameters())
        if strict:
            missing = [n for n in params if n not in state]
            unexpected = [n for n in state if n not in params]
            if missing or unexpected:
                raise ConfigurationError(
                    f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, array in state.items():
            if name not in params:
                continue
            p = params[name]
            if tuple(array.shape) != p.shape:
                raise DimensionError(f"parameter {name}: checkpoint shape {tuple(array.shape)} vs model {p.shape}")
            p.data[...] = array


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: Optional[Tuple[int, ...]] = None) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape or (fan_in, fan_out))


# ------------------------------
# Basic layers
# ------------------------------
class Linear(Module):
    """y = x @ W + b with W stored as [in, out]."""

    def __init__(self, isize: int, osize: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, isize, osize))
        self.bias = Parameter(np.zeros(osize)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, isize: int, eps: float = 1e-6):
        super().__init__()
        self.weight = Parameter(np.ones(isize))
        self.bias = Parameter(np.zeros(isize))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, self.eps)


class Dropout(Module):
    """Dropout drawing its masks from a counter-based stream."""

    def __init__(self, p: float, stream: Optional[RandomStream]):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p
        self.stream = stream

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        return dropout(x, self.p, True, self.stream.generator())


class Noiser(Module):
    """
    Dynamically scaled Gaussian noise: x + N(0, (scale * rms(x))^2), where
    rms is taken over the last dimension. Identity at inference.
    """

    def __init__(self, scale: float, stream: Optional[RandomStream]):
        super().__init__()
        if scale < 0:
            raise ConfigurationError(f"noise scale must be >= 0, got {scale}")
        self.scale = scale
        self.stream = stream

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.scale == 0.0:
            return x
        rms = np.sqrt(np.mean(x.data * x.data, axis=-1, keepdims=True))
        noise = self.stream.generator().standard_normal(x.shape) * (self.scale * rms)
        return x + Tensor(noise, dtype=x.dtype)


# ------------------------------
# Positional embedding
# ------------------------------
def positional_embedding(length: int, dim: int, start: int = 0) -> np.ndarray:
    """Sinusoidal table: PE[p, 2i] = sin(p / 10000^(2i/dim)), PE[p, 2i+1] = cos(...)."""
    if dim % 2:
        raise DimensionError(f"positional embedding dimension must be even, got {dim}")
    pos = np.arange(start, start + length, dtype=np.float64)[:, None]
    rate = np.power(10000.0, -np.arange(0, dim, 2, dtype=np.float64) / dim)
    table = np.empty((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate)
    return table


class PositionalEmb:
    """Memoized positional table; requests past the cache extend it once."""

    def __init__(self, dim: int, cache_len: int = 256):
        self.dim = dim
        self._table = positional_embedding(cache_len, dim)
        self._lock = threading.Lock()

    @property
    def cached(self) -> int:
        return self._table.shape[0]

    def rows(self, start: int, length: int) -> np.ndarray:
        end = start + length
        if end > self._table.shape[0]:
            with self._lock:
                have = self._table.shape[0]
                if end > have:
                    grow = max(end, 2 * have) - have
                    self._table = np.concatenate([self._table, positional_embedding(grow, self.dim, have)])
        return self._table[start:end]


# ------------------------------
# Attention
# ------------------------------
def _split_heads(x: Tensor, nhead: int) -> Tensor:
    b, t, h = x.shape
    return transpose(x.reshape(b, t, nhead, h // nhead), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, nhead, t, dh = x.shape
    return transpose(x, (0, 2, 1, 3)).reshape(b, t, nhead * dh)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray],
                         drop: Optional[Dropout] = None) -> Tuple[Tensor, np.ndarray]:
    """
    softmax(q k^T / sqrt(d_head), hidden where mask) v over [B, heads, T, d_head].

    Returns:
        (context, fully_masked) where fully_masked flags query rows with no
        visible key; those rows come out as zeros
    """
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(q.shape[-1]))
    weights = softmax(scores, axis=-1, mask=mask)
    if mask is not None:
        fully_masked = np.broadcast_to(mask, scores.shape).all(axis=-1)
    else:
        fully_masked = np.zeros(scores.shape[:-1], dtype=bool)
    if fully_masked.any():
        logger.debug(f"{int(fully_masked.sum())} attention rows have no visible key")
    if drop is not None:
        weights = drop(weights)
    return matmul(weights, v), fully_masked


class MultiHeadAttn(Module):
    """Generic multi-head attention with separate query/key/value projections."""

    def __init__(self, isize: int, hsize: int, osize: int, nhead: int, attn_drop: float,
                 rng: np.random.Generator, stream: Optional[RandomStream] = None):
        super().__init__()
        if hsize % nhead:
            raise ConfigurationError(f"attention size {hsize} not divisible by {nhead} heads")
        self.nhead = nhead
        self.query = Linear(isize, hsize, rng)
        self.key = Linear(isize, hsize, rng)
        self.value = Linear(isize, hsize, rng)
        self.outer = Linear(hsize, osize, rng)
        self.drop = Dropout(attn_drop, stream)

    def forward(self, q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        ctx, _ = scaled_dot_attention(
            _split_heads(self.query(q), self.nhead),
            _split_heads(self.key(k), self.nhead),
            _split_heads(self.value(v), self.nhead),
            mask, self.drop)
        return self.outer(_merge_heads(ctx))


class SelfAttn(Module):
    """Self attention with one fused query/key/value projection."""

    def __init__(self, isize: int, hsize: int, osize: int, nhead: int, attn_drop: float,
                 rng: np.random.Generator, stream: Optional[RandomStream] = None):
        super().__init__()
        if hsize % nhead:
            raise ConfigurationError(f"attention size {hsize} not divisible by {nhead} heads")
        self.nhead = nhead
        self.hsize = hsize
        self.adaptor = Linear(isize, 3 * hsize, rng)
        self.outer = Linear(hsize, osize, rng)
        self.drop = Dropout(attn_drop, stream)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None,
                cache: Optional[Dict[str, Tensor]] = None) -> Tensor:
        """
        Args:
            x: [B, T, isize]
            mask: broadcastable to [B, heads, T, T_total], True = hidden
            cache: when given, keys/values of earlier positions; updated in place
                with those of x so the next call attends to all of them
        """
        q, k, v = (_split_heads(part, self.nhead) for part in split(self.adaptor(x), 3, axis=-1))
        if cache is not None:
            if "k" in cache:
                k = concat([cache["k"], k], axis=2)
                v = concat([cache["v"], v], axis=2)
            cache["k"], cache["v"] = k, v
        ctx, _ = scaled_dot_attention(q, k, v, mask, self.drop)
        return self.outer(_merge_heads(ctx))


class CrossAttn(Module):
    """Attention from decoder queries to a fixed memory; keys/values can be projected once."""

    def __init__(self, isize: int, hsize: int, osize: int, nhead: int, attn_drop: float,
                 rng: np.random.Generator, stream: Optional[RandomStream] = None, ksize: Optional[int] = None):
        super().__init__()
        if hsize % nhead:
            raise ConfigurationError(f"attention size {hsize} not divisible by {nhead} heads")
        self.nhead = nhead
        self.query = Linear(isize, hsize, rng)
        self.kv = Linear(ksize or isize, 2 * hsize, rng)
        self.outer = Linear(hsize, osize, rng)
        self.drop = Dropout(attn_drop, stream)

    def project(self, memory: Tensor) -> Tuple[Tensor, Tensor]:
        k, v = split(self.kv(memory), 2, axis=-1)
        return _split_heads(k, self.nhead), _split_heads(v, self.nhead)

    def forward(self, q: Tensor, memory: Optional[Tensor] = None, mask: Optional[np.ndarray] = None,
                kv: Optional[Tuple[Tensor, Tensor]] = None) -> Tensor:
        if kv is None:
            if memory is None:
                raise ContractError("cross attention needs a memory or projected keys/values")
            kv = self.project(memory)
        ctx, _ = scaled_dot_attention(_split_heads(self.query(q), self.nhead), kv[0], kv[1], mask, self.drop)
        return self.outer(_merge_heads(ctx))


# ------------------------------
# Feed-forward style blocks
# ------------------------------
class PositionwiseFF(Module):
    """Pre-norm residual block: x + dropout(W2 relu(W1 LN(x)))."""

    def __init__(self, isize: int, hsize: int, drop: float, rng: np.random.Generator,
                 stream: Optional[RandomStream] = None):
        super().__init__()
        self.normer = LayerNorm(isize)
        self.w1 = Linear(isize, hsize, rng)
        self.w2 = Linear(hsize, isize, rng)
        self.drop = Dropout(drop, stream)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.drop(self.w2(relu(self.w1(self.normer(x)))))


class AvgAttnState:
    """Running sum and step counter of average attention; size does not grow with t."""

    def __init__(self, total: Optional[np.ndarray] = None, steps: int = 0):
        self.total = total
        self.steps = steps

    def mean(self) -> np.ndarray:
        if self.steps == 0:
            raise ContractError("average attention queried before any step")
        return self.total / self.steps

    @property
    def nbytes(self) -> int:
        return 0 if self.total is None else self.total.nbytes

    def select(self, index: np.ndarray) -> "AvgAttnState":
        return AvgAttnState(None if self.total is None else self.total[index], self.steps)


class AverageAttn(Module):
    """
    Average attention: the cumulative mean of the inputs goes through a
    feed-forward layer and is gated against the current input.
    """

    def __init__(self, isize: int, hsize: int, drop: float, rng: np.random.Generator,
                 stream: Optional[RandomStream] = None):
        super().__init__()
        self.w1 = Linear(isize, hsize, rng)
        self.w2 = Linear(hsize, isize, rng)
        self.gate = Linear(2 * isize, 2 * isize, rng)
        self.drop = Dropout(drop, stream)

    def _gated(self, y: Tensor, avg: Tensor) -> Tensor:
        h = self.w2(self.drop(relu(self.w1(avg))))
        gi, gf = split(sigmoid(self.gate(concat([y, h], axis=-1))), 2, axis=-1)
        return gi * y + gf * h

    def forward(self, y: Tensor, state: Optional[AvgAttnState] = None) -> Tensor:
        """
        Args:
            y: [B, T, isize]; with a state, T must be 1 and the state is advanced
        """
        if y.shape[1] == 0:
            raise ContractError("average attention over an empty sequence")
        if state is None:
            counts = np.arange(1, y.shape[1] + 1, dtype=y.dtype).reshape(1, -1, 1)
            return self._gated(y, cumsum(y, axis=1) / counts)
        state.total = y.data.copy() if state.total is None else state.total + y.data
        state.steps += 1
        return self._gated(y, Tensor(state.mean(), dtype=y.dtype))


class ResidueCombiner(Module):
    """LN(sum(inputs) + FFN(concat(inputs))) over a fixed number of same-shaped inputs."""

    def __init__(self, isize: int, ncomb: int, hsize: int, drop: float, rng: np.random.Generator,
                 stream: Optional[RandomStream] = None):
        super().__init__()
        if ncomb < 2:
            raise ConfigurationError(f"combiner needs at least 2 inputs, got {ncomb}")
        self.ncomb = ncomb
        self.w1 = Linear(isize * ncomb, hsize, rng)
        self.w2 = Linear(hsize, isize, rng)
        self.drop = Dropout(drop, stream)
        self.normer = LayerNorm(isize)

    def forward(self, outputs: Sequence[Tensor]) -> Tensor:
        if len(outputs) != self.ncomb:
            raise DimensionError(f"combiner built for {self.ncomb} inputs, got {len(outputs)}")
        shape = outputs[0].shape
        for out in outputs[1:]:
            if out.shape != shape:
                raise DimensionError(f"combiner inputs differ in shape: {shape} vs {out.shape}")
        residual = outputs[0]
        for out in outputs[1:]:
            residual = residual + out
        hidden = self.w2(self.drop(relu(self.w1(concat(list(outputs), axis=-1)))))
        return self.normer(residual + hidden)


class LSTMCell(Module):
    """Single LSTM cell over [input; hidden] with one fused gate projection."""

    def __init__(self, isize: int, osize: int, rng: np.random.Generator):
        super().__init__()
        self.osize = osize
        self.trans = Linear(isize + osize, 4 * osize, rng)

    def forward(self, x: Tensor, state: Tuple[Tensor, Tensor]) -> Tuple[Tensor, Tensor]:
        h, c = state
        ig, fg, og, hidden = split(self.trans(concat([x, h], axis=-1)), 4, axis=-1)
        c = sigmoid(fg) * c + sigmoid(ig) * tanh(hidden)
        return sigmoid(og) * tanh(c), c
