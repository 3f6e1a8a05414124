"""
DeskMT: Vocabulary
==================
Token/index mapping with four reserved specials, built from corpus
frequencies, plus the collector of target-side forbidden indexes.

Author: DeskMT Team
Date: 2026-02-07
"""

from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from errors import FormatError
from logging_config import get_logger

logger = get_logger("deskmt.vocab")

SPECIALS = ("<pad>", "<sos>", "<eos>", "<unk>")
PAD, SOS, EOS, UNK = 0, 1, 2, 3


class Vocab:
    """
    Index 0..3 are <pad>, <sos>, <eos>, <unk>; other tokens follow by
    descending frequency, ties broken lexicographically.
    """

    def __init__(self, tokens: Sequence[str], freq: Optional[Counter] = None):
        if tuple(tokens[:4]) != SPECIALS:
            raise FormatError(f"vocabulary must start with {SPECIALS}, got {tuple(tokens[:4])}")
        self.itos: List[str] = list(tokens)
        self.stoi: Dict[str, int] = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise FormatError("vocabulary contains duplicate tokens")
        self.freq: Counter = freq if freq is not None else Counter()

    @classmethod
    def from_counter(cls, freq: Counter, min_freq: int = 1) -> "Vocab":
        kept = sorted((tok for tok, n in freq.items() if n >= min_freq and tok not in SPECIALS),
                      key=lambda tok: (-freq[tok], tok))
        return cls(list(SPECIALS) + kept, Counter({tok: freq[tok] for tok in kept}))

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.stoi.get(tok, UNK) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        """Map ids to tokens, stopping at <eos> and skipping <pad>/<sos>."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, SOS):
                continue
            out.append(self.itos[i] if 0 <= i < len(self.itos) else SPECIALS[UNK])
        return out

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.itos):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocab":
        """
        Raises:
            FormatError: malformed line, non-contiguous indexes or missing specials
        """
        tokens = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[1].isdigit():
                    raise FormatError(f"{path}:{lineno}: expected 'token<TAB>index'")
                if int(parts[1]) != len(tokens):
                    raise FormatError(f"{path}:{lineno}: index {parts[1]} out of order")
                tokens.append(parts[0])
        return cls(tokens)


def build_vocab(pairs, min_freq: int = 1, shared: bool = False) -> Union[Vocab, Tuple[Vocab, Vocab]]:
    """
    Build per-side vocabularies, or one shared vocabulary when ``shared``.

    Tokens seen fewer than ``min_freq`` times are left out and encode as <unk>.
    """
    src_freq: Counter = Counter()
    tgt_freq: Counter = Counter()
    for pair in pairs:
        src_freq.update(pair.src_tokens)
        tgt_freq.update(pair.tgt_tokens)
    if shared:
        vocab = Vocab.from_counter(src_freq + tgt_freq, min_freq)
        logger.info(f"Shared vocabulary: {len(vocab)} entries")
        return vocab
    src, tgt = Vocab.from_counter(src_freq, min_freq), Vocab.from_counter(tgt_freq, min_freq)
    logger.info(f"Vocabularies: source {len(src)}, target {len(tgt)}")
    return src, tgt


def collect_forbidden_indexes(tgt_corpus: Iterable[Sequence[str]], vocab: Vocab) -> List[int]:
    """
    Indexes the decoder should never produce: <pad>, <sos> and every regular
    entry that does not occur on the target side.
    """
    seen = set()
    for tokens in tgt_corpus:
        seen.update(tokens)
    forbidden = {PAD, SOS}
    forbidden.update(i for i, tok in enumerate(vocab.itos) if i >= len(SPECIALS) and tok not in seen)
    return sorted(forbidden)
