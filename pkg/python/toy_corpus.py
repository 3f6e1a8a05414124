"""
DeskMT: Toy Corpus Generator
============================
Synthetic parallel corpora for smoke tests and acceptance checks:

1. Copy task: random token sequences whose target equals the source
2. Reverse task: target is the source reversed
3. Subword pairs: random words segmented with "@@" continuation markers,
   with their pre-segmentation text alongside

Every generator is driven by an explicit seed.

Author: DeskMT Team
Date: 2026-02-09
"""

from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from corpus import BPE_MARKER, SentencePair, write_parallel
from logging_config import get_logger

logger = get_logger("deskmt.toy")

TASKS = ("copy", "reverse")


class ToyCorpusGenerator:
    """
    Generates parallel corpora over a closed alphabet of ``num_tokens`` symbols
    named ``t0 .. t{n-1}``.
    """

    def __init__(self, num_tokens: int = 26, seed: int = 0):
        if num_tokens < 1:
            raise ValueError(f"num_tokens must be positive, got {num_tokens}")
        self.num_tokens = num_tokens
        self.seed = seed
        self.alphabet = [f"t{i}" for i in range(num_tokens)]
        self.rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x746F79])))

    def _sequence(self, min_len: int, max_len: int) -> List[str]:
        length = int(self.rng.integers(min_len, max_len + 1))
        return [self.alphabet[i] for i in self.rng.integers(0, self.num_tokens, size=length)]

    def task_pairs(self, count: int, task: str = "copy", min_len: int = 3,
                   max_len: int = 10) -> List[SentencePair]:
        """
        Copy or reverse pairs.

        Args:
            count: number of pairs
            task: "copy" or "reverse"
            min_len, max_len: inclusive length range of the source
        """
        if task not in TASKS:
            raise ValueError(f"unknown toy task {task!r}; expected one of {TASKS}")
        if not 1 <= min_len <= max_len:
            raise ValueError(f"invalid length range [{min_len}, {max_len}]")
        pairs = []
        for _ in range(count):
            src = self._sequence(min_len, max_len)
            tgt = src if task == "copy" else src[::-1]
            pairs.append(SentencePair(tuple(src), tuple(tgt)))
        logger.info(f"Generated {count} {task} pairs (lengths {min_len}..{max_len})")
        return pairs

    def _segment(self, word: str, split_prob: float) -> List[str]:
        pieces: List[str] = []
        start = 0
        for cut in range(1, len(word)):
            if self.rng.random() < split_prob:
                pieces.append(word[start:cut] + BPE_MARKER)
                start = cut
        pieces.append(word[start:])
        return pieces

    def subword_pairs(self, count: int, min_words: int = 2, max_words: int = 8,
                      split_prob: float = 0.3) -> List[SentencePair]:
        """
        Pairs of random words where each word is cut into pieces with
        probability ``split_prob`` per inner position. Raw tokens are kept so
        ratio cleaning sees the true pre-segmentation text.
        """
        letters = "abcdefghij"
        pairs = []
        for _ in range(count):
            sides = []
            for _side in range(2):
                n_words = int(self.rng.integers(min_words, max_words + 1))
                words = ["".join(letters[i] for i in self.rng.integers(0, len(letters),
                                                                         size=int(self.rng.integers(2, 7))))
                         for _ in range(n_words)]
                pieces = [p for w in words for p in self._segment(w, split_prob)]
                sides.append((tuple(pieces), tuple(words)))
            (src, src_raw), (tgt, tgt_raw) = sides
            pairs.append(SentencePair(src, tgt, src_raw, tgt_raw))
        logger.info(f"Generated {count} subword pairs (split probability {split_prob})")
        return pairs


def write_toy_corpus(out_dir: Union[str, Path], train: int = 2000, dev: int = 200, task: str = "copy",
                     num_tokens: int = 26, min_len: int = 3, max_len: int = 10,
                     seed: int = 0) -> Dict[str, Path]:
    """Write train/dev splits as ``{split}.src`` / ``{split}.tgt``; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = ToyCorpusGenerator(num_tokens=num_tokens, seed=seed)
    written: Dict[str, Path] = {}
    for split, count in (("train", train), ("dev", dev)):
        pairs = gen.task_pairs(count, task=task, min_len=min_len, max_len=max_len)
        src, tgt = out_dir / f"{split}.src", out_dir / f"{split}.tgt"
        write_parallel(pairs, src, tgt)
        written[f"{split}.src"], written[f"{split}.tgt"] = src, tgt
    logger.info(f"Toy corpus written to {out_dir}")
    return written


def token_accuracy(hypotheses: List[List[str]], references: List[List[str]],
                   pad: Optional[str] = None) -> float:
    """Fraction of reference positions reproduced exactly (position-aligned)."""
    total = correct = 0
    for hyp, ref in zip(hypotheses, references):
        total += len(ref)
        correct += sum(1 for i, tok in enumerate(ref) if i < len(hyp) and hyp[i] == tok and tok != pad)
    return correct / total if total else 0.0
