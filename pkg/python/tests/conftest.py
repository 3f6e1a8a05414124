"""
DeskMT: Test Configuration
==========================
Pytest fixtures shared by the unit suites: tiny model configurations,
64-bit precision, toy corpora, temporary run directories and a FastAPI
test client around a tiny translator.

Author: DeskMT Team
Date: 2026-02-12
"""

import sys
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from api import create_app
from config import BeamConfig, ExperimentConfig, ModelConfig, ServerSettings, TrainConfig
from corpus import SentencePair
from dataset import encode_pairs, sort_and_batch
from decoding import Translator
from nmt import NMT
from tensor import precision
from vocab import build_vocab

VARIANTS = ["standard", "avg_attn", "transparent", "hierarchical", "rnmt_dec"]


def tiny_config(variant: str = "standard", **overrides) -> ModelConfig:
    values = dict(isize=8, nlayer=2, ff_hsize=16, nhead=2, drop=0.0, attn_drop=0.0,
                  cache_len=8, variant=variant)
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def float64():
    """Run the test with float64 as the default tensor dtype"""
    with precision(np.float64):
        yield


@pytest.fixture
def model_factory():
    """Build tiny models: model_factory(variant, src_vocab=11, tgt_vocab=13, seed=0, **config)"""
    def make(variant: str = "standard", src_vocab: int = 11, tgt_vocab: int = 13, seed: int = 0, **overrides):
        return NMT(tiny_config(variant, **overrides), src_vocab, tgt_vocab, seed=seed)
    return make


@pytest.fixture
def toy_pairs():
    """Small copy-style parallel corpus"""
    lines = [
        ("a b c", "a b c"),
        ("b c d e", "b c d e"),
        ("c a", "c a"),
        ("d d e a b", "d d e a b"),
        ("e b", "e b"),
        ("a c e", "a c e"),
    ]
    return [SentencePair.from_lines(s, t) for s, t in lines]


@pytest.fixture
def toy_vocabs(toy_pairs):
    return build_vocab(toy_pairs)


@pytest.fixture
def toy_batches(toy_pairs, toy_vocabs):
    src_vocab, tgt_vocab = toy_vocabs
    return sort_and_batch(encode_pairs(toy_pairs, src_vocab, tgt_vocab), 12, 32)


@pytest.fixture
def experiment():
    """Experiment config factory over the tiny model"""
    def make(variant: str = "standard", model: dict = None, **train) -> ExperimentConfig:
        values = dict(tokens_optm=4, warm_step=4, batch_report=1, seed=7, maxrun=2, epoch_start_checkpoint_save=1)
        values.update(train)
        return ExperimentConfig(model=tiny_config(variant, **(model or {})), train=TrainConfig(**values))
    return make


@pytest.fixture
def tmp_run_dir(tmp_path):
    return tmp_path / "expm" / "toy" / "run"


@pytest.fixture
def translator(toy_vocabs):
    src_vocab, tgt_vocab = toy_vocabs
    model = NMT(tiny_config(), len(src_vocab), len(tgt_vocab), seed=3)
    return Translator([model], src_vocab, tgt_vocab, BeamConfig(beam_size=2, max_len=6), name="tiny")


@pytest.fixture
def server_settings():
    return ServerSettings(beam=2, alpha=0.0, max_len=6, max_batch=4, workers=2)


@pytest.fixture
def client(translator, server_settings):
    """FastAPI test client"""
    with TestClient(create_app(translator, server_settings)) as test_client:
        yield test_client
