"""
DeskMT: Vocabulary and Dataset Tests
====================================
Unit tests for vocabulary construction, forbidden indexes, token-budget
batching, epoch ordering and the binary dataset container.

Author: DeskMT Testing Team
Date: 2026-02-13
"""

import logging
import struct
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from corpus import SentencePair
from dataset import (
    BatchUnit, DatasetFile, encode_pairs, epoch_order, load_batches, make_batch, read_dataset,
    sort_and_batch, write_dataset,
)
from errors import ContractError, FormatError
from vocab import EOS, PAD, SOS, SPECIALS, UNK, Vocab, build_vocab, collect_forbidden_indexes


def pairs_of(*lines):
    return [SentencePair.from_lines(s, t) for s, t in lines]


def random_id_pairs(n: int, seed: int = 0, max_len: int = 12):
    rng = np.random.default_rng(seed)
    return [(list(rng.integers(4, 30, size=rng.integers(1, max_len + 1))),
             list(rng.integers(4, 30, size=rng.integers(1, max_len + 1)))) for _ in range(n)]


class TestVocab:
    """Vocabulary construction and files"""

    def test_specials_first(self):
        """Test indexes 0..3 are the specials in order"""
        vocab, _ = build_vocab(pairs_of(("a", "b")))
        assert tuple(vocab.itos[:4]) == SPECIALS == ("<pad>", "<sos>", "<eos>", "<unk>")
        assert (PAD, SOS, EOS, UNK) == (0, 1, 2, 3)

    def test_empty_corpus(self):
        """Test an empty corpus yields the specials only"""
        src, tgt = build_vocab([])
        assert len(src) == len(tgt) == 4

    def test_frequency_then_lexicographic(self):
        """Test 'a a b' gives a=4, b=5 and ties sort lexicographically"""
        src, _ = build_vocab(pairs_of(("a a b", "x"), ("d c", "x")))
        assert src.index("a") == 4
        assert [src.itos[i] for i in range(5, 8)] == ["b", "c", "d"]

    def test_min_freq_maps_to_unk(self):
        """Test rare tokens are left out and encode as <unk>"""
        src, _ = build_vocab(pairs_of(("a a b", "x")), min_freq=2)
        assert "b" not in src
        assert src.encode(["a", "b"]) == [4, UNK]

    def test_shared_bound(self):
        """Test shared size is at most |src| + |tgt| - 4"""
        pairs = pairs_of(("a b c", "b c d"), ("e", "a"))
        src, tgt = build_vocab(pairs)
        shared = build_vocab(pairs, shared=True)
        assert len(shared) <= len(src) + len(tgt) - 4
        assert set(shared.itos) == set(src.itos) | set(tgt.itos)

    def test_decode_stops_at_eos(self):
        """Test decoding skips pad/sos and stops at eos"""
        vocab = Vocab(list(SPECIALS) + ["x", "y"])
        assert vocab.decode([SOS, 4, PAD, 5, EOS, 4]) == ["x", "y"]

    def test_save_load(self, tmp_path):
        """Test vocabulary files round-trip"""
        src, _ = build_vocab(pairs_of(("a a b c", "x")))
        src.save(tmp_path / "src.vcb")
        assert Vocab.load(tmp_path / "src.vcb") == src

    @pytest.mark.parametrize("content", [
        "<pad>\t0\n<sos>\t1\n<eos>\t2\n<unk>\t3\nx\t7\n",
        "<pad>\t0\n<sos>\t1\n<eos>\t2\n<unk>\t3\nbroken\n",
        "<sos>\t0\n<pad>\t1\n<eos>\t2\n<unk>\t3\n",
    ])
    def test_load_malformed(self, tmp_path, content):
        """Test out-of-order indexes, malformed lines and missing specials"""
        path = tmp_path / "bad.vcb"
        path.write_text(content, encoding="utf-8")
        with pytest.raises(FormatError):
            Vocab.load(path)


class TestForbiddenIndexes:
    """Target-side forbidden index collection"""

    def test_everything_present(self):
        """Test every token on the target side gives [0, 1]"""
        vocab = build_vocab(pairs_of(("a b", "a b")), shared=True)
        assert collect_forbidden_indexes([("a", "b")], vocab) == [0, 1]

    def test_source_only_token(self):
        """Test a token seen only in the source is forbidden"""
        pairs = pairs_of(("q a", "a b"))
        vocab = build_vocab(pairs, shared=True)
        forbidden = collect_forbidden_indexes([p.tgt_tokens for p in pairs], vocab)
        assert vocab.index("q") in forbidden
        assert forbidden == sorted(set(forbidden))
        assert forbidden[:2] == [0, 1]


class TestBatching:
    """Sorting and token-budget batching"""

    def test_sort_order(self):
        """Test totals 4,4,6 with target lengths 2,1,3 order as (4,1), (4,2), (6,3)"""
        pairs = [([4, 5], [6, 7]), ([4, 5, 6], [7]), ([4, 5, 6], [7, 8, 9])]
        (batch,) = sort_and_batch(pairs, 1000, 10)
        tgt_lengths = (batch.tgt != PAD).sum(axis=1) - 2
        assert tgt_lengths.tolist() == [1, 2, 3]
        assert batch.src[0].tolist() == [4, 5, 6]

    def test_target_framing(self):
        """Test every target row is <sos> tokens <eos> then padding"""
        batch = make_batch([([4], [5, 6]), ([4, 5], [7])])
        assert batch.tgt.tolist() == [[SOS, 5, 6, EOS], [SOS, 7, EOS, PAD]]
        assert batch.ntokens == 5

    def test_identical_pairs_one_batch(self):
        """Test identical pairs within budget form one batch"""
        batches = sort_and_batch([([4, 5], [6, 7])] * 5, 100, 10)
        assert len(batches) == 1 and batches[0].rows == 5

    @pytest.mark.parametrize("budget", [16, 40, 100])
    def test_budget_respected_and_nothing_lost(self, budget):
        """Test rows x padded width fits the budget and every pair survives"""
        pairs = random_id_pairs(200, seed=budget)
        batches = sort_and_batch(pairs, budget, 12)
        assert sum(b.rows for b in batches) == len(pairs)
        for b in batches:
            assert b.rows * b.src.shape[1] <= budget
            assert b.rows * b.tgt.shape[1] <= budget

    def test_ascending_lengths(self):
        """Test batches follow ascending total length"""
        batches = sort_and_batch(random_id_pairs(100, seed=3), 30, 12)
        totals = [int((b.src != PAD).sum(axis=1).max() + (b.tgt != PAD).sum(axis=1).max()) for b in batches]
        firsts = [int((b.src[0] != PAD).sum() + (b.tgt[0] != PAD).sum()) for b in batches]
        assert firsts == sorted(firsts)
        assert all(t >= f for t, f in zip(totals, firsts))

    def test_long_and_empty_dropped(self):
        """Test over-length and empty pairs are removed"""
        batches = sort_and_batch([([4] * 11, [5]), ([4], []), ([4], [5])], 100, 10)
        assert sum(b.rows for b in batches) == 1

    def test_oversized_pair_alone(self, caplog):
        """Test a pair above the budget is emitted alone with a warning"""
        with caplog.at_level(logging.WARNING, logger="deskmt.dataset"):
            batches = sort_and_batch([([4], [5]), ([4] * 8, [5] * 8)], 6, 20)
        assert [b.rows for b in batches] == [1, 1]
        assert "exceeds the budget" in caplog.text

    def test_invalid_budget(self):
        """Test non-positive budgets are refused"""
        with pytest.raises(ContractError):
            sort_and_batch([([4], [5])], 0, 10)

    def test_encode_pairs(self):
        """Test pairs map to ids without specials"""
        pairs = pairs_of(("a b", "x"))
        src, tgt = build_vocab(pairs)
        assert encode_pairs(pairs, src, tgt) == [([4, 5], [4])]


class TestEpochOrder:
    """Curriculum then seeded shuffles"""

    def test_first_epoch_identity(self):
        """Test epoch 1 keeps the short-to-long order"""
        assert epoch_order(1, 5, seed=3).tolist() == [0, 1, 2, 3, 4]

    def test_later_epoch_deterministic_permutation(self):
        """Test later epochs are seeded permutations"""
        a, b = epoch_order(2, 50, seed=3), epoch_order(2, 50, seed=3)
        np.testing.assert_array_equal(a, b)
        assert sorted(a.tolist()) == list(range(50))
        assert not np.array_equal(a, epoch_order(3, 50, seed=3))

    def test_no_batches(self):
        """Test zero batches is a contract error"""
        with pytest.raises(ContractError):
            epoch_order(1, 0, seed=0)


class TestDatasetFile:
    """Binary container with an offset index"""

    def _write(self, tmp_path):
        batches = sort_and_batch(random_id_pairs(60, seed=9), 40, 12)
        path = tmp_path / "train.bin"
        write_dataset(batches, path, 30, 31)
        return batches, path

    def test_round_trip(self, tmp_path):
        """Test read(write(x)) == x with vocabulary sizes"""
        batches, path = self._write(tmp_path)
        loaded, src_v, tgt_v = load_batches(path)
        assert loaded == batches
        assert (src_v, tgt_v) == (30, 31)

    def test_random_access(self, tmp_path):
        """Test read_batch(i) equals the sequential i-th batch"""
        batches, path = self._write(tmp_path)
        with read_dataset(path) as data:
            assert len(data) == len(batches)
            for i in np.random.default_rng(0).permutation(len(batches)):
                assert data[int(i)] == batches[int(i)]
            with pytest.raises(IndexError):
                data.read_batch(len(batches))

    def test_header_count_matches_index(self, tmp_path):
        """Test the header batch count equals the offset entries"""
        batches, path = self._write(tmp_path)
        header = path.read_bytes()[:24]
        magic, version, _, _, count = struct.unpack("<4sIIIQ", header)
        assert (magic, version, count) == (b"NTRN", 1, len(batches))

    def test_bad_magic(self, tmp_path):
        """Test a foreign file is a format error"""
        _, path = self._write(tmp_path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            DatasetFile(path)

    def test_bad_version(self, tmp_path):
        """Test an unknown version is a format error"""
        _, path = self._write(tmp_path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 9)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version"):
            DatasetFile(path)

    def test_truncated(self, tmp_path):
        """Test a cut file fails on open or on the last batch"""
        batches, path = self._write(tmp_path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            with DatasetFile(path) as data:
                data.read_batch(len(batches) - 1)

    def test_empty_write_refused(self, tmp_path):
        """Test writing no batches is a contract error"""
        with pytest.raises(ContractError):
            write_dataset([], tmp_path / "x.bin", 4, 4)

    def test_batch_unit_equality(self):
        """Test batch equality compares both matrices"""
        a = BatchUnit(np.array([[4]]), np.array([[1, 5, 2]]))
        assert a == BatchUnit(np.array([[4]]), np.array([[1, 5, 2]]))
        assert a != BatchUnit(np.array([[4]]), np.array([[1, 6, 2]]))
