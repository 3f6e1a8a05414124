"""
DeskMT: Translation Model
=========================
Encoder-decoder model tying the encoder and the variant-specific decoder
together behind one interface used by training, decoding and ranking.

Author: DeskMT Team
Date: 2026-02-05
"""

from typing import Tuple

import numpy as np

from config import ModelConfig
from decoder import DecoderState, build_decoder
from encoder import Encoder, EncoderOutput
from errors import ConfigurationError
from logging_config import get_logger
from modules import Module
from tensor import RandomStreams, Tensor

logger = get_logger("deskmt.nmt")


class NMT(Module):
    """
    Sequence-to-sequence translation model.

    Parameters are initialized from ``seed``; dropout and noise draw from
    counter-based streams derived from the same seed.
    """

    def __init__(self, cfg: ModelConfig, src_vocab_size: int, tgt_vocab_size: int, seed: int = 0):
        super().__init__()
        if cfg.share_emb and src_vocab_size != tgt_vocab_size:
            raise ConfigurationError(
                f"share_emb needs a shared vocabulary, got sizes {src_vocab_size} and {tgt_vocab_size}")
        self.config = cfg
        self.streams = RandomStreams(seed)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0])))
        dec = build_decoder(cfg, tgt_vocab_size, rng, self.streams)
        self.enc = Encoder(cfg, src_vocab_size, rng, self.streams, dec.wemb if cfg.share_emb else None)
        self.dec = dec
        logger.debug(f"Built {cfg.variant} model with {self.num_parameters()} parameters")

    @property
    def src_vocab_size(self) -> int:
        return self.enc.vocab_size

    @property
    def tgt_vocab_size(self) -> int:
        return self.dec.vocab_size

    def check_vocab(self, src_size: int, tgt_size: int) -> None:
        """
        Raises:
            ConfigurationError: vocabulary sizes do not match the model
        """
        if (src_size, tgt_size) != (self.src_vocab_size, self.tgt_vocab_size):
            raise ConfigurationError(
                f"vocabulary sizes {src_size}/{tgt_size} do not match model "
                f"{self.src_vocab_size}/{self.tgt_vocab_size}")

    def encode(self, src_ids: np.ndarray) -> EncoderOutput:
        return self.enc(src_ids)

    def decode_forward(self, enc: EncoderOutput, tgt_in: np.ndarray) -> Tensor:
        return self.dec(enc, tgt_in)

    def forward(self, src_ids: np.ndarray, tgt_ids: np.ndarray) -> Tensor:
        """Teacher-forced logits for ``tgt_ids[:, 1:]`` given ``tgt_ids[:, :-1]``."""
        return self.decode_forward(self.encode(src_ids), np.asarray(tgt_ids)[:, :-1])

    def init_state(self, enc: EncoderOutput) -> DecoderState:
        return self.dec.init_state(enc)

    def decode_step(self, enc: EncoderOutput, state: DecoderState,
                    last_token: np.ndarray) -> Tuple[Tensor, DecoderState]:
        return self.dec.step(enc, state, last_token)
