"""
DeskMT: Batched Binary Dataset
==============================
Sorting, token-budget batching and the binary dataset container.

Layout (little-endian)::

    "NTRN" | u32 version | u32 src_vocab | u32 tgt_vocab | u64 batch_count
    u64 offset[batch_count]
    per batch: u32 rows | u32 src_cols | u32 tgt_cols | u32 src ids | u32 tgt ids

The offset table gives O(1) random access to any batch.

Author: DeskMT Team
Date: 2026-02-07
"""

import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError, FormatError
from logging_config import get_logger
from vocab import EOS, PAD, SOS, Vocab

logger = get_logger("deskmt.dataset")

MAGIC = b"NTRN"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
_BATCH_HEADER = struct.Struct("<III")

IdPair = Tuple[Sequence[int], Sequence[int]]


@dataclass
class BatchUnit:
    """
    Padded id matrices of one batch: src [B, S] without specials, tgt [B, T]
    as <sos> tokens <eos>; both padded with 0.
    """

    src: np.ndarray
    tgt: np.ndarray

    @property
    def rows(self) -> int:
        return self.src.shape[0]

    @property
    def ntokens(self) -> int:
        """Non-pad target tokens predicted under teacher forcing (<eos> included)."""
        return int((self.tgt[:, 1:] != PAD).sum())

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, BatchUnit) and np.array_equal(self.src, other.src)
                and np.array_equal(self.tgt, other.tgt))


def encode_pairs(pairs, src_vocab: Vocab, tgt_vocab: Vocab) -> List[Tuple[List[int], List[int]]]:
    """Map SentencePairs to id lists (no specials added)."""
    return [(src_vocab.encode(p.src_tokens), tgt_vocab.encode(p.tgt_tokens)) for p in pairs]


def _pad(rows: Sequence[Sequence[int]], width: int) -> np.ndarray:
    out = np.zeros((len(rows), width), dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
    return out


def make_batch(items: Sequence[IdPair]) -> BatchUnit:
    srcs = [list(s) for s, _ in items]
    tgts = [[SOS] + list(t) + [EOS] for _, t in items]
    return BatchUnit(_pad(srcs, max(map(len, srcs))), _pad(tgts, max(map(len, tgts))))


def sort_and_batch(pairs: Sequence[IdPair], batch_token_budget: int, max_len: int) -> List[BatchUnit]:
    """
    Sort by (total tokens, target tokens) and pack consecutive pairs so that
    rows x padded columns stays within the budget on both sides.

    Pairs with a side longer than ``max_len`` or an empty side are dropped.
    A pair that alone exceeds the budget becomes its own batch.
    """
    if batch_token_budget <= 0:
        raise ContractError(f"batch token budget must be positive, got {batch_token_budget}")
    kept = [(list(s), list(t)) for s, t in pairs if 0 < len(s) <= max_len and 0 < len(t) <= max_len]
    if len(kept) < len(pairs):
        logger.info(f"Dropped {len(pairs) - len(kept)} pairs that are empty or longer than {max_len}")
    kept.sort(key=lambda p: (len(p[0]) + len(p[1]), len(p[1])))

    batches: List[BatchUnit] = []
    current: List[IdPair] = []
    src_cols = tgt_cols = 0
    for src, tgt in kept:
        s, t = len(src), len(tgt) + 2
        rows = len(current) + 1
        if current and (rows * max(src_cols, s) > batch_token_budget or rows * max(tgt_cols, t) > batch_token_budget):
            batches.append(make_batch(current))
            current, src_cols, tgt_cols = [], 0, 0
        if not current and (s > batch_token_budget or t > batch_token_budget):
            logger.warning(f"Pair with {s} source / {t} target tokens exceeds the budget "
                           f"{batch_token_budget}; emitted alone")
        current.append((src, tgt))
        src_cols, tgt_cols = max(src_cols, s), max(tgt_cols, t)
    if current:
        batches.append(make_batch(current))
    return batches


def epoch_order(epoch: int, n_batches: int, seed: int) -> np.ndarray:
    """Identity at epoch 1 (short to long); a (seed, epoch)-determined shuffle afterwards."""
    if n_batches < 1:
        raise ContractError("epoch_order needs at least one batch")
    if epoch <= 1:
        return np.arange(n_batches)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch])))
    return rng.permutation(n_batches)


# ------------------------------
# Binary container
# ------------------------------
def write_dataset(batches: Sequence[BatchUnit], path: Union[str, Path],
                  src_vocab_size: int, tgt_vocab_size: int) -> None:
    if not batches:
        raise ContractError("refusing to write an empty dataset")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    offset = _HEADER.size + 8 * len(batches)
    offsets = []
    blobs = []
    for batch in batches:
        blob = (_BATCH_HEADER.pack(batch.rows, batch.src.shape[1], batch.tgt.shape[1])
                + batch.src.astype("<u4").tobytes() + batch.tgt.astype("<u4").tobytes())
        offsets.append(offset)
        blobs.append(blob)
        offset += len(blob)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, src_vocab_size, tgt_vocab_size, len(batches)))
        f.write(np.asarray(offsets, dtype="<u8").tobytes())
        for blob in blobs:
            f.write(blob)
    logger.info(f"Wrote {len(batches)} batches to {path}")


class DatasetFile:
    """Random-access reader over a written dataset."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self._file = open(self.path, "rb")
        self._lock = threading.Lock()
        self._size = self.path.stat().st_size
        head = self._file.read(_HEADER.size)
        if len(head) < _HEADER.size:
            self.close()
            raise FormatError(f"{self.path}: truncated header")
        magic, version, self.src_vocab_size, self.tgt_vocab_size, count = _HEADER.unpack(head)
        if magic != MAGIC:
            self.close()
            raise FormatError(f"{self.path}: bad magic {magic!r}")
        if version != VERSION:
            self.close()
            raise FormatError(f"{self.path}: unsupported version {version}")
        table = self._file.read(8 * count)
        if len(table) < 8 * count:
            self.close()
            raise FormatError(f"{self.path}: truncated offset table")
        self.offsets = np.frombuffer(table, dtype="<u8").astype(np.int64)
        if count and (self.offsets.max() >= self._size or self.offsets.min() < _HEADER.size + 8 * count):
            self.close()
            raise FormatError(f"{self.path}: offset table points outside the file")

    def __len__(self) -> int:
        return len(self.offsets)

    def _read_exact(self, n: int, what: str) -> bytes:
        data = self._file.read(n)
        if len(data) < n:
            raise FormatError(f"{self.path}: truncated {what}")
        return data

    def read_batch(self, index: int) -> BatchUnit:
        if not 0 <= index < len(self.offsets):
            raise IndexError(f"batch {index} outside dataset of {len(self.offsets)} batches")
        with self._lock:
            self._file.seek(int(self.offsets[index]))
            rows, scols, tcols = _BATCH_HEADER.unpack(self._read_exact(_BATCH_HEADER.size, f"batch {index}"))
            src = np.frombuffer(self._read_exact(4 * rows * scols, f"batch {index}"), dtype="<u4")
            tgt = np.frombuffer(self._read_exact(4 * rows * tcols, f"batch {index}"), dtype="<u4")
        return BatchUnit(src.reshape(rows, scols).astype(np.int64), tgt.reshape(rows, tcols).astype(np.int64))

    def __getitem__(self, index: int) -> BatchUnit:
        return self.read_batch(index)

    def __iter__(self) -> Iterator[BatchUnit]:
        for i in range(len(self)):
            yield self.read_batch(i)

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> "DatasetFile":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_dataset(path: Union[str, Path]) -> DatasetFile:
    return DatasetFile(path)


def load_batches(path: Union[str, Path]) -> Tuple[List[BatchUnit], int, int]:
    """Read every batch into memory; returns (batches, src_vocab_size, tgt_vocab_size)."""
    with DatasetFile(path) as data:
        return list(data), data.src_vocab_size, data.tgt_vocab_size
