"""
DeskMT: Decoding
================
Greedy, beam and ensemble search over a common scorer interface, the
forward-only decoding path, corpus ranking, and the Translator facade
shared by the CLI and the REST server.

Scorers:
- ModelScorer: incremental decode_step with cached state
- EnsembleScorer: mean of member probabilities, log taken afterwards
- ForwardScorer: re-runs decode_forward on the growing prefix, for models
  that only implement the training forward pass

Author: DeskMT Team
Date: 2026-02-09
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from checkpoint import load_model
from config import BeamConfig
from corpus import merge_subwords
from errors import ConfigurationError, ContractError
from logging_config import get_logger
from loss import LabelSmoothingLoss
from nmt import NMT
from tensor import Tensor, log_softmax, no_grad
from vocab import EOS, PAD, SOS, Vocab

logger = get_logger("deskmt.decoding")

DEFAULT_FORBIDDEN = (PAD, SOS)


def length_penalty(length: int, alpha: float) -> float:
    """((5 + length) / 6) ** alpha, length counting generated tokens including <eos>."""
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class Hypothesis:
    tokens: Tuple[int, ...]
    logp: float
    finished: bool = False
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.tokens) - 1

    def score(self, alpha: float) -> float:
        return self.logp / length_penalty(max(self.length, 1), alpha)


@dataclass
class Translation:
    """Decoded ids without <sos>/<eos>; truncated when max_len was reached without <eos>."""

    tokens: List[int]
    score: float
    logp: float
    truncated: bool = False


def _rank_key(h: Hypothesis, alpha: float):
    return (-h.score(alpha), h.length, h.tokens)


def _to_translation(h: Hypothesis, alpha: float) -> Translation:
    body = [t for t in h.tokens[1:] if t != EOS]
    return Translation(body, h.score(alpha), h.logp, h.truncated)


# ------------------------------
# Scorers
# ------------------------------
def _log_probs(logits: Tensor) -> np.ndarray:
    return log_softmax(logits, axis=-1).data.astype(np.float64)


class ModelScorer:
    def __init__(self, model: NMT):
        self.model = model
        self.vocab_size = model.tgt_vocab_size

    def start(self, src: np.ndarray) -> Any:
        enc = self.model.encode(src)
        return enc, self.model.init_state(enc)

    def step(self, state: Any, last: np.ndarray) -> Tuple[np.ndarray, Any]:
        enc, dec_state = state
        logits, dec_state = self.model.decode_step(enc, dec_state, last)
        return _log_probs(logits), (enc, dec_state)

    def select(self, state: Any, index: np.ndarray) -> Any:
        enc, dec_state = state
        return enc.select(index), dec_state.select(index)


class ForwardScorer(ModelScorer):
    """Recomputes the full teacher-forced forward pass over the prefix at every step."""

    def start(self, src: np.ndarray) -> Any:
        enc = self.model.encode(src)
        return enc, np.zeros((enc.batch, 0), dtype=np.int64)

    def step(self, state: Any, last: np.ndarray) -> Tuple[np.ndarray, Any]:
        enc, prefix = state
        prefix = np.concatenate([prefix, np.asarray(last, dtype=np.int64).reshape(-1, 1)], axis=1)
        logits = self.model.decode_forward(enc, prefix)
        return _log_probs(logits)[:, -1], (enc, prefix)

    def select(self, state: Any, index: np.ndarray) -> Any:
        enc, prefix = state
        return enc.select(index), prefix[index]


class EnsembleScorer:
    """Averages member next-token probabilities; the log is taken after averaging."""

    def __init__(self, models: Sequence[NMT]):
        sizes = {m.tgt_vocab_size for m in models}
        if len(sizes) != 1:
            raise ConfigurationError(f"ensemble members disagree on target vocabulary size: {sorted(sizes)}")
        self.members = [ModelScorer(m) for m in models]
        self.vocab_size = sizes.pop()

    def start(self, src: np.ndarray) -> Any:
        return [m.start(src) for m in self.members]

    def step(self, state: Any, last: np.ndarray) -> Tuple[np.ndarray, Any]:
        probs = None
        new_state = []
        for member, st in zip(self.members, state):
            logp, st = member.step(st, last)
            new_state.append(st)
            probs = np.exp(logp) if probs is None else probs + np.exp(logp)
        with np.errstate(divide="ignore"):
            return np.log(probs / len(self.members)), new_state

    def select(self, state: Any, index: np.ndarray) -> Any:
        return [m.select(st, index) for m, st in zip(self.members, state)]


def make_scorer(models: Union[NMT, Sequence[NMT]]):
    if isinstance(models, NMT):
        return ModelScorer(models)
    models = list(models)
    if not models:
        raise ConfigurationError("no models to decode with")
    return ModelScorer(models[0]) if len(models) == 1 else EnsembleScorer(models)


# ------------------------------
# Search
# ------------------------------
def _forbid(logp: np.ndarray, forbidden: Sequence[int]) -> np.ndarray:
    if len(forbidden):
        logp[:, list(forbidden)] = -np.inf
    return logp


def _greedy(scorer, src: np.ndarray, max_len: int, forbidden: Sequence[int]) -> Hypothesis:
    state = scorer.start(src)
    tokens = [SOS]
    logp = 0.0
    for _ in range(max_len):
        scores, state = scorer.step(state, np.array([tokens[-1]]))
        scores = _forbid(scores, forbidden)[0]
        best = int(np.argmax(scores))
        if not np.isfinite(scores[best]):
            raise ContractError("every target token is forbidden")
        tokens.append(best)
        logp += float(scores[best])
        if best == EOS:
            return Hypothesis(tuple(tokens), logp, finished=True)
    return Hypothesis(tuple(tokens), logp, truncated=True)


def _beam(scorer, src: np.ndarray, beam_size: int, alpha: float, max_len: int,
          forbidden: Sequence[int]) -> List[Hypothesis]:
    state = scorer.start(src)
    live = [Hypothesis((SOS,), 0.0)]
    done: List[Hypothesis] = []
    for t in range(1, max_len + 1):
        scores, state = scorer.step(state, np.array([h.tokens[-1] for h in live]))
        scores = _forbid(scores, forbidden)
        totals = np.array([h.logp for h in live])[:, None] + scores
        penalty = length_penalty(t, alpha)

        flat = totals.reshape(-1)
        finite = np.flatnonzero(np.isfinite(flat))
        if finite.size == 0:
            break
        if finite.size > beam_size:
            cut = np.partition(flat[finite], finite.size - beam_size)[finite.size - beam_size]
            finite = finite[flat[finite] >= cut]
        vocab = totals.shape[1]
        candidates = sorted(
            ((int(i) // vocab, int(i) % vocab) for i in finite),
            key=lambda pv: (-(flat[pv[0] * vocab + pv[1]] / penalty), live[pv[0]].tokens, pv[1]),
        )[:beam_size]

        next_live, parents = [], []
        for parent, token in candidates:
            hyp = Hypothesis(live[parent].tokens + (token,), float(totals[parent, token]))
            if token == EOS:
                hyp.finished = True
                done.append(hyp)
            else:
                next_live.append(hyp)
                parents.append(parent)
        live = next_live
        if not live:
            break
        if t == max_len:
            for hyp in live:
                hyp.truncated = True
            done.extend(live)
            break
        if done:
            best_done = max(h.score(alpha) for h in done)
            optimistic = max(h.logp / length_penalty(max_len, alpha) for h in live)
            if best_done >= optimistic:
                break
        state = scorer.select(state, np.asarray(parents))
    return sorted(done, key=lambda h: _rank_key(h, alpha))


def _rows(src_ids: np.ndarray) -> List[np.ndarray]:
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.ndim == 1:
        src_ids = src_ids[None]
    rows = []
    for row in src_ids:
        row = row[row != PAD]
        if row.size == 0:
            raise ContractError("cannot decode an empty source sentence")
        rows.append(row[None])
    return rows


def _decode(scorer, src_ids: np.ndarray, beam_size: int, alpha: float, max_len: int,
            forbidden: Sequence[int]) -> List[List[Translation]]:
    results = []
    with no_grad():
        for src in _rows(src_ids):
            if beam_size == 1:
                hyps = [_greedy(scorer, src, max_len, forbidden)]
            else:
                hyps = _beam(scorer, src, beam_size, alpha, max_len, forbidden)
                if not hyps:
                    raise ContractError("every target token is forbidden")
            results.append([_to_translation(h, alpha) for h in hyps])
    return results


def greedy_decode(model: NMT, src_ids: np.ndarray, max_len: int = 256,
                  forbidden: Sequence[int] = DEFAULT_FORBIDDEN) -> List[Translation]:
    """Argmax decoding per source row until <eos> or max_len tokens."""
    return [r[0] for r in _decode(ModelScorer(model), src_ids, 1, 0.0, max_len, forbidden)]


def beam_decode(model: NMT, src_ids: np.ndarray, cfg: Optional[BeamConfig] = None,
                forbidden: Sequence[int] = DEFAULT_FORBIDDEN) -> List[List[Translation]]:
    """
    Beam search per source row; each result lists completed hypotheses by
    length-penalized score, ties broken by shorter length then lower ids.
    """
    cfg = cfg or BeamConfig()
    return _decode(ModelScorer(model), src_ids, cfg.beam_size, cfg.alpha, cfg.max_len, forbidden)


def ensemble_decode(models: Sequence[NMT], src_ids: np.ndarray, cfg: Optional[BeamConfig] = None,
                    forbidden: Sequence[int] = DEFAULT_FORBIDDEN) -> List[List[Translation]]:
    cfg = cfg or BeamConfig()
    return _decode(make_scorer(models), src_ids, cfg.beam_size, cfg.alpha, cfg.max_len, forbidden)


def train_decode(model: NMT, src_ids: np.ndarray, cfg: Optional[BeamConfig] = None,
                 forbidden: Sequence[int] = DEFAULT_FORBIDDEN) -> List[Translation]:
    """Greedy or beam decoding through the training forward pass only; best hypothesis per row."""
    cfg = cfg or BeamConfig()
    results = _decode(ForwardScorer(model), src_ids, cfg.beam_size, cfg.alpha, cfg.max_len, forbidden)
    return [r[0] for r in results]


# ------------------------------
# Ranking
# ------------------------------
def rank_corpus(model: NMT, pairs: Sequence[Tuple[Sequence[int], Sequence[int]]], smoothing: float = 0.1,
                forbidden: Sequence[int] = DEFAULT_FORBIDDEN, progress: bool = False) -> List[Tuple[int, float]]:
    """
    Per-token smoothed cross-entropy of each gold target under teacher forcing.

    Args:
        pairs: (source ids, target ids) without specials

    Returns:
        (original index, loss) sorted ascending by loss
    """
    criterion = LabelSmoothingLoss(model.tgt_vocab_size, smoothing, forbidden, reduction="sum")
    was_training = model.training
    model.eval()
    scores = []
    with no_grad():
        for index, (src, tgt) in enumerate(tqdm(pairs, desc="rank", disable=not progress)):
            src_ids = np.asarray([list(src)], dtype=np.int64)
            tgt_ids = np.asarray([[SOS] + list(tgt) + [EOS]], dtype=np.int64)
            loss, _, count = criterion(model(src_ids, tgt_ids), tgt_ids[:, 1:])
            scores.append((index, float(loss.data) / max(count, 1)))
    model.train(was_training)
    return sorted(scores, key=lambda s: (s[1], s[0]))


def write_ranking(path: Union[str, Path], ranking: Iterable[Tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for index, loss in ranking:
            f.write(f"{index}\t{loss:.6f}\n")


# ------------------------------
# Text facade
# ------------------------------
class Translator:
    """
    Text-in, text-out translation over one model or an ensemble.

    Output tokens have subword continuation markers merged.
    """

    def __init__(self, models: Sequence[NMT], src_vocab: Vocab, tgt_vocab: Vocab,
                 beam: Optional[BeamConfig] = None, forbidden: Sequence[int] = DEFAULT_FORBIDDEN,
                 name: str = "model"):
        if not models:
            raise ConfigurationError("translator needs at least one model")
        for model in models:
            model.check_vocab(len(src_vocab), len(tgt_vocab))
            model.eval()
        self.models = list(models)
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.beam = beam or BeamConfig()
        self.forbidden = tuple(forbidden)
        self.name = name
        self.scorer = make_scorer(self.models)

    @classmethod
    def from_files(cls, model_paths: Sequence[Union[str, Path]], src_vocab: Union[str, Path],
                   tgt_vocab: Union[str, Path], beam: Optional[BeamConfig] = None,
                   forbidden: Sequence[int] = DEFAULT_FORBIDDEN) -> "Translator":
        models = [load_model(p) for p in model_paths]
        name = "+".join(Path(p).stem for p in model_paths)
        logger.info(f"Loaded {len(models)} model(s): {name}")
        return cls(models, Vocab.load(src_vocab), Vocab.load(tgt_vocab), beam, forbidden, name)

    def translate_ids(self, src: Sequence[int], beam_size: Optional[int] = None,
                      alpha: Optional[float] = None) -> Translation:
        beam_size = self.beam.beam_size if beam_size is None else beam_size
        alpha = self.beam.alpha if alpha is None else alpha
        return _decode(self.scorer, np.asarray(src, dtype=np.int64), beam_size, alpha,
                       self.beam.max_len, self.forbidden)[0][0]

    def translate_line(self, line: str, beam_size: Optional[int] = None, alpha: Optional[float] = None) -> str:
        tokens = line.split()
        if not tokens:
            return ""
        result = self.translate_ids(self.src_vocab.encode(tokens), beam_size, alpha)
        if result.truncated:
            logger.debug("Translation reached max_len without <eos>")
        return " ".join(merge_subwords(self.tgt_vocab.decode(result.tokens)))

    def translate(self, lines: Sequence[str], beam_size: Optional[int] = None,
                  alpha: Optional[float] = None, progress: bool = False) -> List[str]:
        return [self.translate_line(line, beam_size, alpha)
                for line in tqdm(lines, desc="translate", disable=not progress)]
