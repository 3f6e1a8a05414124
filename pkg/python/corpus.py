"""
DeskMT: Corpus Cleaning
=======================
Parallel corpus cleaning applied before batching:

1. max_keeper: keep the most frequent translation of each source sentence
2. clean_by_vocab: drop pairs dominated by the rarest vocabulary types
3. clean_by_ratios: drop pairs whose subword segmentation ratios exceed
   thresholds estimated on a development set

Subword segmentation is external; tokens carrying the continuation marker
("@@" by default) are glued to the next token to recover pre-segmentation
words when those are not supplied.

Author: DeskMT Team
Date: 2026-02-06
"""

from collections import Counter, OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from config import RatioThresholds
from errors import ConfigurationError, ContractError, FormatError
from logging_config import get_logger

logger = get_logger("deskmt.corpus")

BPE_MARKER = "@@"

Tokens = Tuple[str, ...]


def normalize_whitespace(line: str) -> str:
    """Collapse runs of blanks and tabs into single blanks and trim the ends."""
    return " ".join(line.split())


def merge_subwords(tokens: Sequence[str], marker: str = BPE_MARKER) -> Tokens:
    """Rebuild words from subword pieces: ("un@@", "believ@@", "able") -> ("unbelievable",)."""
    words: List[str] = []
    piece = ""
    for tok in tokens:
        if tok.endswith(marker):
            piece += tok[: -len(marker)]
        else:
            words.append(piece + tok)
            piece = ""
    if piece:
        words.append(piece)
    return tuple(words)


def split_counts(tokens: Sequence[str], marker: str = BPE_MARKER) -> Tuple[int, int]:
    """Return (number of words, number of words segmented into several pieces)."""
    words = split = 0
    pieces = 0
    for tok in tokens:
        pieces += 1
        if not tok.endswith(marker):
            words += 1
            split += pieces > 1
            pieces = 0
    if pieces:
        words += 1
        split += pieces > 1
    return words, split


@dataclass(frozen=True)
class SentencePair:
    """Source/target token sequences, optionally with their pre-segmentation tokens."""

    src_tokens: Tokens
    tgt_tokens: Tokens
    src_raw_tokens: Optional[Tokens] = None
    tgt_raw_tokens: Optional[Tokens] = None

    @classmethod
    def from_lines(cls, src: str, tgt: str, src_raw: Optional[str] = None,
                   tgt_raw: Optional[str] = None) -> "SentencePair":
        return cls(
            tuple(src.split()), tuple(tgt.split()),
            tuple(src_raw.split()) if src_raw is not None else None,
            tuple(tgt_raw.split()) if tgt_raw is not None else None,
        )

    @property
    def src_text(self) -> str:
        return " ".join(self.src_tokens)

    @property
    def tgt_text(self) -> str:
        return " ".join(self.tgt_tokens)

    def raw(self, side: str, marker: str = BPE_MARKER) -> Tokens:
        given = self.src_raw_tokens if side == "src" else self.tgt_raw_tokens
        if given is not None:
            return given
        return merge_subwords(self.src_tokens if side == "src" else self.tgt_tokens, marker)

    def normalized(self) -> "SentencePair":
        def norm(tokens: Optional[Tokens]) -> Optional[Tokens]:
            return None if tokens is None else tuple(" ".join(tokens).split())
        return SentencePair(norm(self.src_tokens), norm(self.tgt_tokens),
                            norm(self.src_raw_tokens), norm(self.tgt_raw_tokens))


# ------------------------------
# File helpers
# ------------------------------
def _read_lines(path: Union[str, Path]) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [normalize_whitespace(line) for line in f]


def read_parallel(src_path: Union[str, Path], tgt_path: Union[str, Path],
                  src_raw_path: Optional[Union[str, Path]] = None,
                  tgt_raw_path: Optional[Union[str, Path]] = None) -> List[SentencePair]:
    """
    Read line-aligned parallel files.

    Raises:
        FormatError: files differ in line count
    """
    columns = [_read_lines(src_path), _read_lines(tgt_path)]
    for extra in (src_raw_path, tgt_raw_path):
        columns.append(_read_lines(extra) if extra is not None else None)
    lengths = {len(c) for c in columns if c is not None}
    if len(lengths) > 1:
        raise FormatError(f"parallel files are not aligned: line counts {sorted(lengths)}")
    pairs = []
    for i in range(len(columns[0])):
        pairs.append(SentencePair.from_lines(
            columns[0][i], columns[1][i],
            columns[2][i] if columns[2] is not None else None,
            columns[3][i] if columns[3] is not None else None,
        ))
    logger.debug(f"Read {len(pairs)} pairs from {src_path} / {tgt_path}")
    return pairs


def write_parallel(pairs: Iterable[SentencePair], src_path: Union[str, Path], tgt_path: Union[str, Path]) -> int:
    count = 0
    with open(src_path, "w", encoding="utf-8") as fs, open(tgt_path, "w", encoding="utf-8") as ft:
        for pair in pairs:
            fs.write(pair.src_text + "\n")
            ft.write(pair.tgt_text + "\n")
            count += 1
    return count


# ------------------------------
# Max keeper
# ------------------------------
def max_keeper(pairs: Iterable[SentencePair]) -> List[SentencePair]:
    """
    Keep, for each distinct source sentence, its most frequent translation once.
    Ties go to the translation seen first; output follows first source occurrence.
    """
    counts: "OrderedDict[Tokens, Counter]" = OrderedDict()
    first: Dict[Tuple[Tokens, Tokens], SentencePair] = {}
    order: Dict[Tokens, List[Tokens]] = {}
    for pair in pairs:
        pair = pair.normalized()
        src, tgt = pair.src_tokens, pair.tgt_tokens
        counts.setdefault(src, Counter())[tgt] += 1
        if (src, tgt) not in first:
            first[(src, tgt)] = pair
            order.setdefault(src, []).append(tgt)
    kept = []
    for src, counter in counts.items():
        best = max(order[src], key=lambda t: counter[t])  # max keeps the first of equals
        kept.append(first[(src, best)])
    return kept


# ------------------------------
# Vocabulary cleaning
# ------------------------------
RareSets = Tuple[FrozenSet[str], FrozenSet[str]]


def _rare_of(freq: Counter, vratio: float) -> FrozenSet[str]:
    n_rare = int(vratio * len(freq) + 1e-9)
    ranked = sorted(freq.items(), key=lambda kv: (kv[1], kv[0]))
    return frozenset(tok for tok, _ in ranked[:n_rare])


def rare_tokens(pairs: Sequence[SentencePair], vratio: float) -> RareSets:
    """
    The ``vratio`` fraction of least frequent types on each side, ties broken
    lexicographically.
    """
    if not 0.0 < vratio < 1.0:
        raise ConfigurationError(f"vratio must be in (0, 1), got {vratio}")
    src_freq: Counter = Counter()
    tgt_freq: Counter = Counter()
    for pair in pairs:
        src_freq.update(pair.src_tokens)
        tgt_freq.update(pair.tgt_tokens)
    return _rare_of(src_freq, vratio), _rare_of(tgt_freq, vratio)


def _rare_fraction(tokens: Sequence[str], rare: FrozenSet[str]) -> float:
    if not tokens:
        return 1.0
    return sum(tok in rare for tok in tokens) / len(tokens)


def clean_by_vocab(pairs: Sequence[SentencePair], vratio: float,
                   rare: Optional[RareSets] = None) -> List[SentencePair]:
    """
    Drop pairs where, on either side, the share of rare tokens exceeds 1 - vratio.

    Without fixed rare sets the filter is repeated with rare sets recomputed
    from the surviving pairs until no pair is dropped, so a second call
    returns its input unchanged.

    Args:
        rare: fixed rare sets; recomputed from the pairs when omitted
    """
    if not 0.0 < vratio < 1.0:
        raise ConfigurationError(f"vratio must be in (0, 1), got {vratio}")
    pairs = list(pairs)
    if not pairs:
        return []
    if rare is not None:
        return _filter_rare(pairs, rare, vratio)
    while pairs:
        kept = _filter_rare(pairs, rare_tokens(pairs, vratio), vratio)
        if len(kept) == len(pairs):
            break
        pairs = kept
    return pairs


def _filter_rare(pairs: List[SentencePair], rare: RareSets, vratio: float) -> List[SentencePair]:
    src_rare, tgt_rare = rare
    limit = 1.0 - vratio
    return [p for p in pairs
            if _rare_fraction(p.src_tokens, src_rare) <= limit
            and _rare_fraction(p.tgt_tokens, tgt_rare) <= limit]


# ------------------------------
# Ratio cleaning
# ------------------------------
def mono_ratios(tokens: Sequence[str], raw_tokens: Optional[Sequence[str]] = None,
                marker: str = BPE_MARKER) -> Optional[Tuple[float, float, float]]:
    """
    (cratio, bratio, sratio) = (nsubadd / nsub, nsub / ntok, nsep / ntok) for one side.

    nsub counts segmented tokens, ntok pre-segmentation tokens, nsubadd is
    nsub - ntok and nsep the number of words split into several pieces.
    Returns None when the side is empty.
    """
    nsub = len(tokens)
    words, nsep = split_counts(tokens, marker)
    ntok = len(raw_tokens) if raw_tokens is not None else words
    if ntok == 0 or nsub == 0:
        return None
    return (nsub - ntok) / nsub, nsub / ntok, nsep / ntok


def bi_ratios(pair: SentencePair, marker: str = BPE_MARKER) -> Optional[Tuple[float, float]]:
    """
    (uratio, oratio): max/min of segmented lengths and of pre-segmentation lengths.
    Returns None when a side is empty.
    """
    nsubsrc, nsubtgt = len(pair.src_tokens), len(pair.tgt_tokens)
    nsrc, ntgt = len(pair.raw("src", marker)), len(pair.raw("tgt", marker))
    if min(nsubsrc, nsubtgt, nsrc, ntgt) == 0:
        return None
    return max(nsubsrc, nsubtgt) / min(nsubsrc, nsubtgt), max(nsrc, ntgt) / min(nsrc, ntgt)


def pair_ratios(pair: SentencePair, marker: str = BPE_MARKER) -> Optional[Dict[str, float]]:
    """All five ratios of a pair, monolingual ones maximized over both sides."""
    src = mono_ratios(pair.src_tokens, pair.src_raw_tokens, marker)
    tgt = mono_ratios(pair.tgt_tokens, pair.tgt_raw_tokens, marker)
    bi = bi_ratios(pair, marker)
    if src is None or tgt is None or bi is None:
        return None
    return {
        "max_cratio": max(src[0], tgt[0]),
        "max_bratio": max(src[1], tgt[1]),
        "max_sratio": max(src[2], tgt[2]),
        "max_uratio": bi[0],
        "max_oratio": bi[1],
    }


def estimate_thresholds(dev_pairs: Sequence[SentencePair], marker: str = BPE_MARKER) -> RatioThresholds:
    """Thresholds as the maxima of each ratio over a development set."""
    best: Dict[str, float] = {}
    for pair in dev_pairs:
        ratios = pair_ratios(pair, marker)
        if ratios is None:
            continue
        for key, value in ratios.items():
            best[key] = max(best.get(key, value), value)
    if not best:
        raise ContractError("cannot estimate thresholds from an empty development set")
    return RatioThresholds(**best)


def clean_by_ratios(pairs: Sequence[SentencePair], thresholds: RatioThresholds,
                    marker: str = BPE_MARKER) -> List[SentencePair]:
    """Keep pairs whose five ratios are all within the thresholds; empty sides are removed."""
    limits = thresholds.model_dump()
    kept = []
    for pair in pairs:
        ratios = pair_ratios(pair, marker)
        if ratios is not None and all(ratios[k] <= limits[k] for k in ratios):
            kept.append(pair)
    return kept
