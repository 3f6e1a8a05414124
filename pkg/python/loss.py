"""
DeskMT: Label Smoothing Loss
============================
Smoothed cross-entropy with forbidden classes.

Per target token the reference distribution puts 1 - smoothing on the
gold index, spreads the remaining mass evenly over the allowed non-gold
classes and leaves forbidden classes (e.g. <pad>, <sos>) at exactly zero.
Padding positions contribute neither loss nor counts.

Author: DeskMT Team
Date: 2026-02-06
"""

from typing import Iterable, Tuple

import numpy as np

from errors import ConfigurationError, ContractError, DimensionError
from tensor import Tensor, log_softmax, mul, neg, tsum

PAD = 0


class LabelSmoothingLoss:
    """
    Smoothed cross-entropy over [B, T, V] logits.

    Args:
        vocab_size: number of classes V
        smoothing: mass taken from the gold class, in [0, 1)
        forbidden: classes that never receive mass
        reduction: "sum", "mean" (over non-pad tokens) or "none" ([B, T] losses)
    """

    def __init__(self, vocab_size: int, smoothing: float = 0.1, forbidden: Iterable[int] = (0, 1),
                 reduction: str = "mean"):
        if not 0.0 <= smoothing < 1.0:
            raise ConfigurationError(f"label smoothing must be in [0, 1), got {smoothing}")
        if reduction not in ("sum", "mean", "none"):
            raise ConfigurationError(f"unknown reduction {reduction!r}")
        self.forbidden = np.array(sorted(set(int(i) for i in forbidden)), dtype=np.int64)
        if self.forbidden.size and (self.forbidden.min() < 0 or self.forbidden.max() >= vocab_size):
            raise ConfigurationError(f"forbidden indexes outside vocabulary of size {vocab_size}")
        self.vocab_size = vocab_size
        self.smoothing = smoothing
        self.reduction = reduction
        allowed_others = vocab_size - self.forbidden.size - 1
        self.fill = smoothing / allowed_others if allowed_others > 0 else 0.0
        self.confidence = 1.0 - smoothing if allowed_others > 0 else 1.0

    def distribution(self, gold: np.ndarray) -> np.ndarray:
        """Reference distributions [N, V] for gold indexes [N]."""
        gold = np.asarray(gold, dtype=np.int64).reshape(-1)
        q = np.full((gold.size, self.vocab_size), self.fill, dtype=np.float64)
        q[:, self.forbidden] = 0.0
        q[np.arange(gold.size), gold] = self.confidence
        return q

    def __call__(self, logits: Tensor, targets: np.ndarray) -> Tuple[Tensor, int, int]:
        """
        Returns:
            (loss, token_errors, token_count) over non-pad target positions
            token_errors counts argmax mistakes among the allowed classes

        Raises:
            DimensionError: logits and targets disagree
            ContractError: a gold index is forbidden
        """
        targets = np.asarray(targets, dtype=np.int64)
        if logits.shape[:-1] != targets.shape or logits.shape[-1] != self.vocab_size:
            raise DimensionError(f"logits {logits.shape} do not match targets {targets.shape} "
                                 f"over vocabulary {self.vocab_size}")
        keep = targets != PAD
        gold = targets[keep]
        if self.forbidden.size and np.isin(gold, self.forbidden).any():
            bad = int(gold[np.isin(gold, self.forbidden)][0])
            raise ContractError(f"gold index {bad} is in the forbidden set")

        q = np.zeros(targets.shape + (self.vocab_size,), dtype=logits.dtype)
        q[keep] = self.distribution(gold)
        per_token = neg(tsum(mul(log_softmax(logits, axis=-1), q), axis=-1))

        count = int(keep.sum())
        scores = logits.data
        if self.forbidden.size:
            scores = scores.copy()
            scores[..., self.forbidden] = -np.inf
        predicted = scores.argmax(axis=-1)
        errors = int(((predicted != targets) & keep).sum())

        if self.reduction == "none":
            return per_token, errors, count
        total = tsum(per_token)
        if self.reduction == "mean":
            total = total * (1.0 / max(count, 1))
        return total, errors, count


def label_smoothing_loss(logits: Tensor, targets: np.ndarray, smoothing: float = 0.1,
                         forbidden: Iterable[int] = (0, 1), reduction: str = "mean") -> Tuple[Tensor, int, int]:
    return LabelSmoothingLoss(logits.shape[-1], smoothing, forbidden, reduction)(logits, targets)
