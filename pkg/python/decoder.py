"""
DeskMT: Decoders
================
Decoder stacks for every model variant, each with two entry points:

- ``forward(enc, tgt_in)``: teacher-forced logits for a whole prefix (training)
- ``step(enc, state, last_token)``: one incremental step over cached state

Variants:
- standard: causal self attention, cross attention, feed-forward
- avg_attn: average attention in place of self attention (constant-size state)
- transparent: layer l attends to a learned mix of all encoder layer outputs
- hierarchical: pairs of layers folded into a running summary
- rnmt_dec: two LSTM layers with cross attention after the first

Author: DeskMT Team
Date: 2026-02-05
"""

import math
from typing import Any, Callable, List, Optional, Tuple

import numpy as np

from config import ModelConfig
from encoder import EncoderOutput, hierarchical_stack, init_embedding, make_combiners
from errors import ConfigurationError, ContractError
from modules import (
    AverageAttn, AvgAttnState, CrossAttn, Dropout, LayerNorm, Linear, LSTMCell,
    Module, PositionalEmb, PositionwiseFF, SelfAttn,
)
from tensor import (
    Parameter, RandomStreams, Tensor, concat, embedding_lookup, getitem, matmul,
    softmax, stack, tanh, transpose,
)


def causal_mask(length: int) -> np.ndarray:
    """[1, 1, T, T] mask hiding future positions."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)[None, None]


class DecoderState:
    """
    Incremental decoding state for one batch of hypotheses.

    caches: per-layer self-attention keys/values, average-attention sums or
    LSTM hidden states; cross: projected encoder keys/values per layer.
    """

    def __init__(self, owner: int, batch: int, caches: List[Any], cross: List[Tuple[Tensor, Tensor]],
                 src_mask: np.ndarray, steps: int = 0):
        self.owner = owner
        self.batch = batch
        self.caches = caches
        self.cross = cross
        self.src_mask = src_mask
        self.steps = steps

    def nbytes(self) -> int:
        total = 0
        for cache in self.caches + self.cross:
            if isinstance(cache, AvgAttnState):
                total += cache.nbytes
            elif isinstance(cache, dict):
                total += sum(t.data.nbytes for t in cache.values())
            else:
                total += sum(t.data.nbytes for t in cache)
        return total

    def select(self, index: np.ndarray) -> "DecoderState":
        """New state whose row i continues row ``index[i]`` of this one."""
        index = np.asarray(index, dtype=np.int64)

        def take(t: Tensor) -> Tensor:
            return Tensor(t.data[index], dtype=t.dtype)

        caches: List[Any] = []
        for cache in self.caches:
            if isinstance(cache, AvgAttnState):
                caches.append(cache.select(index))
            elif isinstance(cache, dict):
                caches.append({k: take(v) for k, v in cache.items()})
            else:
                caches.append(tuple(take(t) for t in cache))
        cross = [(take(k), take(v)) for k, v in self.cross]
        return DecoderState(self.owner, len(index), caches, cross, self.src_mask[index], self.steps)


class Classifier(Module):
    """Output projection to vocabulary logits, optionally sharing the embedding table."""

    def __init__(self, vocab_size: int, isize: int, rng: np.random.Generator, tied: Optional[Parameter]):
        super().__init__()
        self.weight = tied if tied is not None else Parameter(init_embedding(rng, vocab_size, isize))
        self.bias = Parameter(np.zeros(vocab_size))

    def forward(self, h: Tensor) -> Tensor:
        return matmul(h, transpose(self.weight)) + self.bias


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, streams: RandomStreams, average: bool = False):
        super().__init__()
        stream = streams.stream("dropout")
        self.average = average
        self.self_normer = LayerNorm(cfg.isize)
        if average:
            self.self_attn = AverageAttn(cfg.isize, cfg.ff_hsize, cfg.drop, rng, stream)
        else:
            self.self_attn = SelfAttn(cfg.isize, cfg.attn_hsize, cfg.isize, cfg.nhead, cfg.attn_drop, rng, stream)
        self.cross_normer = LayerNorm(cfg.isize)
        self.cross_attn = CrossAttn(cfg.isize, cfg.attn_hsize, cfg.isize, cfg.nhead, cfg.attn_drop, rng, stream)
        self.drop = Dropout(cfg.drop, stream)
        self.ff = PositionwiseFF(cfg.isize, cfg.ff_hsize, cfg.drop, rng, stream)

    def new_cache(self):
        return AvgAttnState() if self.average else {}

    def forward(self, x: Tensor, kv: Tuple[Tensor, Tensor], src_mask: np.ndarray,
                self_mask: Optional[np.ndarray], cache=None) -> Tensor:
        y = self.self_normer(x)
        if self.average:
            s = self.self_attn(y, cache)
        else:
            s = self.self_attn(y, self_mask, cache)
        x = x + self.drop(s)
        x = x + self.drop(self.cross_attn(self.cross_normer(x), mask=src_mask, kv=kv))
        return self.ff(x)


class Decoder(Module):
    """Standard (and average-attention) Transformer decoder."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator, streams: RandomStreams):
        super().__init__()
        self.isize = cfg.isize
        self.wemb = Parameter(init_embedding(rng, vocab_size, cfg.isize))
        self.pemb = PositionalEmb(cfg.isize, cfg.cache_len)
        self.drop = Dropout(cfg.drop, streams.stream("dropout"))
        average = cfg.variant == "avg_attn"
        self.nets = [DecoderLayer(cfg, rng, streams, average) for _ in range(cfg.nlayer)]
        self.out_normer = LayerNorm(cfg.isize) if cfg.norm_output else None
        self.classifier = Classifier(vocab_size, cfg.isize, rng, self.wemb if cfg.bindDecoderEmb else None)

    @property
    def vocab_size(self) -> int:
        return self.wemb.shape[0]

    def embed(self, ids: np.ndarray, start: int) -> Tensor:
        x = embedding_lookup(self.wemb, ids) * math.sqrt(self.isize)
        x = x + Tensor(self.pemb.rows(start, ids.shape[1]), dtype=x.dtype)
        return self.drop(x)

    def memories(self, enc: EncoderOutput) -> List[Tensor]:
        return [enc.final] * len(self.nets)

    def run_stack(self, x: Tensor, apply: Callable[[int, Tensor], Tensor]) -> Tensor:
        for i in range(len(self.nets)):
            x = apply(i, x)
        return x

    def classify(self, h: Tensor) -> Tensor:
        if self.out_normer is not None:
            h = self.out_normer(h)
        return self.classifier(h)

    def forward(self, enc: EncoderOutput, tgt_in: np.ndarray) -> Tensor:
        """
        Args:
            enc: encoder output for the same batch
            tgt_in: [B, T] target prefix starting with <sos>

        Returns:
            logits [B, T, V]
        """
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        if tgt_in.ndim != 2 or tgt_in.shape[1] == 0:
            raise ContractError(f"decoder input must be a non-empty [B, T] matrix, got shape {tgt_in.shape}")
        self_mask = causal_mask(tgt_in.shape[1])
        kvs = [net.cross_attn.project(m) for net, m in zip(self.nets, self.memories(enc))]
        src_mask = enc.attn_mask
        h = self.run_stack(self.embed(tgt_in, 0),
                           lambda i, x: self.nets[i](x, kvs[i], src_mask, self_mask))
        return self.classify(h)

    def init_state(self, enc: EncoderOutput) -> DecoderState:
        kvs = [net.cross_attn.project(m) for net, m in zip(self.nets, self.memories(enc))]
        return DecoderState(id(self), enc.batch, [net.new_cache() for net in self.nets], kvs, enc.src_mask)

    def check_state(self, state: DecoderState, last_token: np.ndarray) -> None:
        if state.owner != id(self) or state.batch != last_token.shape[0]:
            raise ContractError(
                f"stale decoder state: built for batch {state.batch}, got tokens of shape {last_token.shape}")

    def step(self, enc: EncoderOutput, state: DecoderState, last_token: np.ndarray) -> Tuple[Tensor, DecoderState]:
        last_token = np.asarray(last_token, dtype=np.int64).reshape(-1)
        self.check_state(state, last_token)
        src_mask = state.src_mask[:, None, None, :]
        x = self.embed(last_token[:, None], state.steps)
        h = self.run_stack(x, lambda i, y: self.nets[i](y, state.cross[i], src_mask, None, state.caches[i]))
        state.steps += 1
        return getitem(self.classify(h), (slice(None), 0)), state


class TransparentDecoder(Decoder):
    """Each layer attends to its own softmax-weighted mix of all encoder layer outputs."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator, streams: RandomStreams):
        super().__init__(cfg, vocab_size, rng, streams)
        self.mix_weights = Parameter(np.zeros((cfg.nlayer, cfg.nlayer + 1)))

    def memories(self, enc: EncoderOutput) -> List[Tensor]:
        if enc.per_layer is None or len(enc.per_layer) != self.mix_weights.shape[1]:
            raise ConfigurationError("transparent decoder needs every encoder layer output")
        mixes = []
        for layer in range(self.mix_weights.shape[0]):
            weights = softmax(getitem(self.mix_weights, layer), axis=-1)
            mix = getitem(weights, 0) * enc.per_layer[0]
            for k in range(1, len(enc.per_layer)):
                mix = mix + getitem(weights, k) * enc.per_layer[k]
            mixes.append(mix)
        return mixes


class HierarchicalDecoder(Decoder):
    """Decoder stack aggregated every two layers, mirroring the hierarchical encoder."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator, streams: RandomStreams):
        super().__init__(cfg, vocab_size, rng, streams)
        self.combiners = make_combiners(cfg, rng, streams.stream("dropout"))

    def run_stack(self, x: Tensor, apply: Callable[[int, Tensor], Tensor]) -> Tensor:
        return hierarchical_stack(x, len(self.nets), self.combiners, apply)


class RNMTDecoder(Module):
    """
    Recurrent decoder: LSTM layer 1 over the embeddings, cross attention
    queried by its output, LSTM layer 2 over [h1; context], and the
    classifier input tanh(W [context; h2]).
    """

    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator, streams: RandomStreams):
        super().__init__()
        stream = streams.stream("dropout")
        self.isize = cfg.isize
        self.wemb = Parameter(init_embedding(rng, vocab_size, cfg.isize))
        self.drop = Dropout(cfg.drop, stream)
        self.cell1 = LSTMCell(cfg.isize, cfg.isize, rng)
        self.attn = CrossAttn(cfg.isize, cfg.attn_hsize, cfg.isize, cfg.nhead, cfg.attn_drop, rng, stream)
        self.cell2 = LSTMCell(2 * cfg.isize, cfg.isize, rng)
        self.reducer = Linear(2 * cfg.isize, cfg.isize, rng)
        self.classifier = Classifier(vocab_size, cfg.isize, rng, self.wemb if cfg.bindDecoderEmb else None)

    @property
    def vocab_size(self) -> int:
        return self.wemb.shape[0]

    def _zeros(self, batch: int, like: Tensor) -> Tuple[Tensor, Tensor]:
        return (Tensor(np.zeros((batch, self.isize)), dtype=like.dtype),
                Tensor(np.zeros((batch, self.isize)), dtype=like.dtype))

    def _output(self, ctx: Tensor, h2: Tensor) -> Tensor:
        return self.classifier(self.drop(tanh(self.reducer(concat([ctx, h2], axis=-1)))))

    def forward(self, enc: EncoderOutput, tgt_in: np.ndarray) -> Tensor:
        tgt_in = np.asarray(tgt_in, dtype=np.int64)
        if tgt_in.ndim != 2 or tgt_in.shape[1] == 0:
            raise ContractError(f"decoder input must be a non-empty [B, T] matrix, got shape {tgt_in.shape}")
        batch, length = tgt_in.shape
        x = self.drop(embedding_lookup(self.wemb, tgt_in))
        state1 = self._zeros(batch, enc.final)
        outs1 = []
        for t in range(length):
            state1 = self.cell1(getitem(x, (slice(None), t)), state1)
            outs1.append(state1[0])
        h1 = stack(outs1, axis=1)
        ctx = self.attn(h1, mask=enc.attn_mask, kv=self.attn.project(enc.final))
        state2 = self._zeros(batch, enc.final)
        outs2 = []
        for t in range(length):
            step_in = concat([outs1[t], getitem(ctx, (slice(None), t))], axis=-1)
            state2 = self.cell2(step_in, state2)
            outs2.append(state2[0])
        return self._output(ctx, stack(outs2, axis=1))

    def init_state(self, enc: EncoderOutput) -> DecoderState:
        batch = enc.batch
        caches = [self._zeros(batch, enc.final), self._zeros(batch, enc.final)]
        return DecoderState(id(self), batch, caches, [self.attn.project(enc.final)], enc.src_mask)

    def step(self, enc: EncoderOutput, state: DecoderState, last_token: np.ndarray) -> Tuple[Tensor, DecoderState]:
        last_token = np.asarray(last_token, dtype=np.int64).reshape(-1)
        if state.owner != id(self) or state.batch != last_token.shape[0]:
            raise ContractError(
                f"stale decoder state: built for batch {state.batch}, got tokens of shape {last_token.shape}")
        x = self.drop(embedding_lookup(self.wemb, last_token))
        h1, c1 = self.cell1(x, state.caches[0])
        ctx = self.attn(h1.reshape(h1.shape[0], 1, self.isize), mask=state.src_mask[:, None, None, :],
                        kv=state.cross[0]).reshape(h1.shape[0], self.isize)
        h2, c2 = self.cell2(concat([h1, ctx], axis=-1), state.caches[1])
        state.caches = [(h1, c1), (h2, c2)]
        state.steps += 1
        return self._output(ctx, h2), state


def build_decoder(cfg: ModelConfig, vocab_size: int, rng: np.random.Generator, streams: RandomStreams) -> Module:
    kinds = {
        "standard": Decoder,
        "avg_attn": Decoder,
        "transparent": TransparentDecoder,
        "hierarchical": HierarchicalDecoder,
        "rnmt_dec": RNMTDecoder,
    }
    return kinds[cfg.variant](cfg, vocab_size, rng, streams)
