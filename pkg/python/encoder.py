"""
DeskMT: Encoder
===============
Pre-norm Transformer encoder. The transparent variant also returns the
embedding output and every layer output; the hierarchical variant folds
each pair of layers into a running summary with a residue combiner.

Author: DeskMT Team
Date: 2026-02-05
"""

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from config import ModelConfig
from errors import ContractError
from modules import (
    Dropout, LayerNorm, Module, Noiser, PositionalEmb, PositionwiseFF,
    ResidueCombiner, SelfAttn, xavier_uniform,
)
from tensor import Parameter, RandomStreams, Tensor, embedding_lookup

PAD = 0


@dataclass
class EncoderOutput:
    """
    Encoder result.

    final: [B, S, isize]; per_layer: embedding output plus each layer output
    (transparent variant only, last entry is ``final``); src_mask: [B, S],
    True at padding.
    """

    final: Tensor
    src_mask: np.ndarray
    per_layer: Optional[List[Tensor]] = None

    @property
    def attn_mask(self) -> np.ndarray:
        return self.src_mask[:, None, None, :]

    @property
    def batch(self) -> int:
        return self.final.shape[0]

    def select(self, index: np.ndarray) -> "EncoderOutput":
        """Gather batch rows, e.g. to repeat one sentence across beam hypotheses."""
        def take(t: Tensor) -> Tensor:
            return Tensor(t.data[index], dtype=t.dtype)
        per_layer = None if self.per_layer is None else [take(t) for t in self.per_layer]
        return EncoderOutput(take(self.final), self.src_mask[index], per_layer)


def init_embedding(rng: np.random.Generator, vocab_size: int, isize: int) -> np.ndarray:
    table = xavier_uniform(rng, vocab_size, isize)
    table[PAD] = 0.0
    return table


def make_combiners(cfg: ModelConfig, rng: np.random.Generator, stream) -> List[ResidueCombiner]:
    """One 3-input combiner per pair of layers, plus a 2-input one for an odd last layer."""
    combiners = [ResidueCombiner(cfg.isize, 3, cfg.ff_hsize, cfg.drop, rng, stream)
                 for _ in range(cfg.nlayer // 2)]
    if cfg.nlayer % 2:
        combiners.append(ResidueCombiner(cfg.isize, 2, cfg.ff_hsize, cfg.drop, rng, stream))
    return combiners


def hierarchical_stack(x: Tensor, nlayer: int, combiners: Sequence[ResidueCombiner],
                       apply: Callable[[int, Tensor], Tensor]) -> Tensor:
    """
    Run ``apply(i, h)`` for each layer; after every pair the summary becomes
    combiner([summary, h_a, h_b]) and the stack continues from it.
    """
    summary, pending, h = x, [], x
    for i in range(nlayer):
        h = apply(i, h)
        pending.append(h)
        if len(pending) == 2:
            summary = combiners[i // 2]([summary] + pending)
            h, pending = summary, []
    if pending:
        summary = combiners[-1]([summary] + pending)
    return summary


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, streams: RandomStreams):
        super().__init__()
        stream = streams.stream("dropout")
        self.attn_normer = LayerNorm(cfg.isize)
        self.attn = SelfAttn(cfg.isize, cfg.attn_hsize, cfg.isize, cfg.nhead, cfg.attn_drop, rng, stream)
        self.drop = Dropout(cfg.drop, stream)
        self.ff = PositionwiseFF(cfg.isize, cfg.ff_hsize, cfg.drop, rng, stream)

    def forward(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = x + self.drop(self.attn(self.attn_normer(x), mask))
        return self.ff(x)


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int, rng: np.random.Generator,
                 streams: RandomStreams, wemb: Optional[Parameter] = None):
        super().__init__()
        self.isize = cfg.isize
        self.variant = cfg.variant
        self.wemb = wemb if wemb is not None else Parameter(init_embedding(rng, vocab_size, cfg.isize))
        self.pemb = PositionalEmb(cfg.isize, cfg.cache_len)
        self.noiser = Noiser(cfg.noise, streams.stream("noise")) if cfg.noise > 0 else None
        self.drop = Dropout(cfg.drop, streams.stream("dropout"))
        self.nets = [EncoderLayer(cfg, rng, streams) for _ in range(cfg.nlayer)]
        self.combiners = make_combiners(cfg, rng, streams.stream("dropout")) if cfg.variant == "hierarchical" else []
        self.out_normer = LayerNorm(cfg.isize) if cfg.norm_output else None

    @property
    def vocab_size(self) -> int:
        return self.wemb.shape[0]

    def embed(self, ids: np.ndarray) -> Tensor:
        x = embedding_lookup(self.wemb, ids) * math.sqrt(self.isize)
        x = x + Tensor(self.pemb.rows(0, ids.shape[1]), dtype=x.dtype)
        if self.noiser is not None:
            x = self.noiser(x)
        return self.drop(x)

    def forward(self, ids: np.ndarray) -> EncoderOutput:
        """
        Args:
            ids: [B, S] source ids, padded with 0

        Raises:
            ContractError: empty batch or empty sequence
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[0] == 0 or ids.shape[1] == 0:
            raise ContractError(f"encoder input must be a non-empty [B, S] matrix, got shape {ids.shape}")
        src_mask = ids == PAD
        mask = src_mask[:, None, None, :]
        x = self.embed(ids)

        if self.variant == "hierarchical":
            final = hierarchical_stack(x, len(self.nets), self.combiners, lambda i, h: self.nets[i](h, mask))
            return EncoderOutput(final, src_mask)

        per_layer = [x]
        for net in self.nets:
            x = net(x, mask)
            per_layer.append(x)
        if self.out_normer is not None:
            x = self.out_normer(x)
            per_layer[-1] = x
        if self.variant == "transparent":
            return EncoderOutput(x, src_mask, per_layer)
        return EncoderOutput(x, src_mask)
