"""
DeskMT: Trainer
===============
Training loop with token-budget gradient accumulation, the warm-up learning
rate schedule, validation, checkpoint rotation and early stopping.

Features:
- Gradients summed over batch units until more than tokens_optm target
  tokens are seen, then one normalized optimizer step
- Per-epoch curriculum (epoch 1 short to long) or seeded shuffle, optionally
  replaced by loss-weighted sampling with a review of the hardest units
- Checkpoints every save_every steps (newest num_checkpoint kept), per epoch,
  on every validation improvement, and a full-state last.ckpt on exit
- Early stopping after earlystop epochs without improvement
- Resumption reproduces the uninterrupted run bit for bit

Author: DeskMT Team
Date: 2026-02-08
"""

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from checkpoint import checkpoint_from_model, load_checkpoint, save_checkpoint
from config import ExperimentConfig
from dataset import BatchUnit, DatasetFile, epoch_order
from errors import ConfigurationError
from journal import RunJournal
from logging_config import attach_file_handler, detach_file_handler, get_logger
from loss import LabelSmoothingLoss
from nmt import NMT
from optim import Adam, noam_lr
from tensor import backward, no_grad

logger = get_logger("deskmt.trainer")

Dataset = Union[DatasetFile, Sequence[BatchUnit]]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def dynamic_sample(unit_losses: Sequence[float], dss_ws: float, dss_rm: float, epoch_units: Sequence[int],
                   epoch: int = 2, seed: int = 0) -> List[int]:
    """
    Schedule of batch-unit indexes for one epoch.

    A dss_ws share of the units is drawn without replacement with probability
    proportional to each unit's last loss and scheduled first, in draw order;
    the units not drawn follow in uniformly shuffled order, so every unit runs
    once. The dss_rm share of highest-loss units is then appended for review.
    With both ratios 0, or in epoch 1, the plain epoch order is returned.
    """
    if (dss_ws == 0 and dss_rm == 0) or epoch <= 1:
        return [int(i) for i in epoch_units]
    n = len(unit_losses)
    losses = np.asarray(unit_losses, dtype=np.float64)
    known = np.isfinite(losses)
    fill = losses[known].mean() if known.any() else 1.0
    losses = np.where(known, losses, fill)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch, 0x445353])))

    n_weighted = min(_round_half_up(dss_ws * n), n)
    weights = losses + 1e-12
    weighted = rng.choice(n, size=n_weighted, replace=False, p=weights / weights.sum())
    drawn = set(int(i) for i in weighted)
    rest = np.array([int(i) for i in epoch_units if int(i) not in drawn], dtype=np.int64)
    rng.shuffle(rest)
    scheduled = np.concatenate([weighted.astype(np.int64), rest])

    review = np.argsort(-losses, kind="stable")[:_round_half_up(dss_rm * n)]
    return [int(i) for i in scheduled] + [int(i) for i in review]


@dataclass
class StepStats:
    step: int
    lr: float
    loss: float
    errors: int
    tokens: int
    units: int


class Trainer:
    """Trains an NMT model on a batched dataset with optional validation."""

    def __init__(self, model: NMT, train_data: Dataset, dev_data: Optional[Dataset], cfg: ExperimentConfig,
                 run_dir: Optional[Union[str, Path]] = None):
        """
        Args:
            model: model to train in place
            train_data: batch units, a DatasetFile or a list
            dev_data: validation batch units, or None to skip validation
            cfg: experiment configuration
            run_dir: output directory, expm/<data_id>/<run_id> by default

        Raises:
            ConfigurationError: output directory not writable or vocabulary mismatch
        """
        self.model = model
        self.train_data = train_data
        self.dev_data = dev_data
        self.cfg = cfg.train
        self.isize = cfg.model.isize
        for data in (train_data, dev_data):
            if isinstance(data, DatasetFile):
                model.check_vocab(data.src_vocab_size, data.tgt_vocab_size)
        if len(train_data) == 0:
            raise ConfigurationError("training data has no batch units")

        self.run_dir = Path(run_dir) if run_dir is not None else cfg.run_dir()
        try:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            probe = self.run_dir / ".write_probe"
            probe.write_text("")
            probe.unlink()
        except OSError as e:
            raise ConfigurationError(f"output directory {self.run_dir} is not writable: {e}") from e

        self.criterion = LabelSmoothingLoss(model.tgt_vocab_size, self.cfg.label_smoothing,
                                            self.cfg.forbidden_indexes, reduction="sum")
        self.optimizer = Adam(model.named_parameters(), use_ams=self.cfg.use_ams,
                              weight_decay=self.cfg.weight_decay)

        self.epoch = 1
        self.step = 0
        self.cursor = 0
        self.schedule: Optional[List[int]] = None
        self.best_loss = math.inf
        self.best_error = math.inf
        self.bad_epochs = 0
        self.unit_losses = [math.nan] * len(train_data)
        self.saved: deque = deque()
        self.report_loss = 0.0
        self.report_tokens = 0
        self.report_units = 0

    # --- state ---
    def training_state(self, epoch_done: bool = False) -> Dict[str, Any]:
        """Counters and sampler state; ``epoch_done`` records the point where the next epoch starts."""
        return {
            "epoch": self.epoch + 1 if epoch_done else self.epoch,
            "step": self.step,
            "cursor": 0 if epoch_done else self.cursor,
            "schedule": None if epoch_done else self.schedule,
            "best_loss": None if math.isinf(self.best_loss) else self.best_loss,
            "best_error": None if math.isinf(self.best_error) else self.best_error,
            "bad_epochs": self.bad_epochs,
            "unit_losses": [None if math.isnan(x) else x for x in self.unit_losses],
            "saved": list(self.saved),
            "random_streams": self.model.streams.state_dict(),
            "report": [self.report_loss, self.report_tokens, self.report_units],
        }

    def load_training_state(self, state: Dict[str, Any]) -> None:
        self.epoch = int(state["epoch"])
        self.step = int(state["step"])
        self.cursor = int(state["cursor"])
        self.schedule = state["schedule"]
        self.best_loss = math.inf if state["best_loss"] is None else state["best_loss"]
        self.best_error = math.inf if state["best_error"] is None else state["best_error"]
        self.bad_epochs = int(state["bad_epochs"])
        self.unit_losses = [math.nan if x is None else x for x in state["unit_losses"]]
        self.saved = deque(state.get("saved", []))
        self.model.streams.load_state_dict(state.get("random_streams", {}))
        self.report_loss, self.report_tokens, self.report_units = state.get("report", [0.0, 0, 0])

    def resume(self, path: Union[str, Path], params: bool = True, optimizer: bool = True,
               training: bool = True) -> None:
        """Restore model parameters, optimizer state and training state from a checkpoint."""
        ckpt = load_checkpoint(path)
        if params:
            self.model.load_state_dict(ckpt.params)
        if optimizer and ckpt.optimizer is not None:
            self.optimizer.load_state_dict(ckpt.optimizer)
        if training and ckpt.training is not None:
            self.load_training_state(ckpt.training)
        logger.info(f"Resumed from {path} at epoch {self.epoch}, step {self.step}")

    def apply_start_options(self) -> None:
        """Load fine_tune_m parameters, train_statesf training state and fine_tune_state optimizer state."""
        if self.cfg.fine_tune_m:
            self.resume(self.cfg.fine_tune_m, params=True, optimizer=False, training=False)
        if self.cfg.train_statesf:
            self.resume(self.cfg.train_statesf, params=False, optimizer=False, training=True)
        if self.cfg.fine_tune_state:
            self.resume(self.cfg.fine_tune_state, params=False, optimizer=True, training=False)

    def save(self, name: str, full: bool = False, epoch_done: bool = False) -> Path:
        keep_optm = full or self.cfg.save_optm_state
        ckpt = checkpoint_from_model(self.model, self.optimizer if keep_optm else None,
                                     self.training_state(epoch_done))
        return save_checkpoint(self.run_dir / name, ckpt)

    # --- core steps ---
    def _fetch(self, data: Dataset, index: int) -> BatchUnit:
        return data[index]

    def unit_loss(self, batch: BatchUnit):
        logits = self.model(batch.src, batch.tgt)
        return self.criterion(logits, batch.tgt[:, 1:])

    def accumulate_and_step(self, batch_iter: Iterator[Any]) -> Optional[StepStats]:
        """
        Forward and backward over consecutive batch units until more than
        tokens_optm target tokens are accumulated, then one optimizer step
        with gradients normalized by the accumulated token count.

        Args:
            batch_iter: yields BatchUnit or (unit index, BatchUnit)

        Returns:
            Step statistics, or None when the iterator was already exhausted
        """
        self.model.train()
        tokens = errors = units = 0
        loss_sum = 0.0
        for item in batch_iter:
            index, batch = item if isinstance(item, tuple) else (None, item)
            loss, err, count = self.unit_loss(batch)
            backward(loss)
            value = float(loss.data)
            if index is not None and count:
                self.unit_losses[index] = value / count
            loss_sum += value
            tokens += count
            errors += err
            units += 1
            if tokens > self.cfg.tokens_optm:
                break
        if units == 0:
            return None
        self.step += 1
        lr = noam_lr(self.step, self.isize, self.cfg.warm_step, self.cfg.lr_scale)
        self.optimizer.step(lr, grad_scale=1.0 / max(tokens, 1))
        self.optimizer.zero_grad()
        self.model.zero_grad()
        return StepStats(self.step, lr, loss_sum / max(tokens, 1), errors, tokens, units)

    def evaluate(self, data: Optional[Dataset] = None) -> Tuple[float, float]:
        """
        Token-level smoothed loss and argmax error rate over non-pad tokens,
        dropout disabled.
        """
        data = self.dev_data if data is None else data
        was_training = self.model.training
        self.model.eval()
        total = 0.0
        errors = tokens = 0
        with no_grad():
            for i in range(len(data)):
                loss, err, count = self.unit_loss(self._fetch(data, i))
                total += float(loss.data)
                errors += err
                tokens += count
        self.model.train(was_training)
        if tokens == 0:
            return 0.0, 0.0
        return total / tokens, errors / tokens

    # --- loop ---
    def epoch_schedule(self, epoch: int) -> List[int]:
        order = epoch_order(epoch, len(self.train_data), self.cfg.seed)
        return dynamic_sample(self.unit_losses, self.cfg.dss_ws, self.cfg.dss_rm, order, epoch, self.cfg.seed)

    def _scheduled_units(self) -> Iterator[Tuple[int, BatchUnit]]:
        while self.cursor < len(self.schedule):
            index = self.schedule[self.cursor]
            self.cursor += 1
            yield index, self._fetch(self.train_data, index)

    def _report(self, stats: StepStats) -> None:
        self.report_loss += stats.loss * stats.tokens
        self.report_tokens += stats.tokens
        self.report_units += stats.units
        if self.report_units >= self.cfg.batch_report:
            avg = self.report_loss / max(self.report_tokens, 1)
            logger.info(f"step={stats.step} epoch={self.epoch} loss={avg:.6f} lr={stats.lr:.6e}")
            self.report_loss, self.report_tokens, self.report_units = 0.0, 0, 0

    def _rotate(self, journal: RunJournal) -> None:
        name = f"checkpoint_{self.step}.ckpt"
        self.saved.append(name)
        path = self.save(name)
        journal.log_event("CHECKPOINT_SAVED", {"path": str(path), "step": self.step, "epoch": self.epoch})
        while len(self.saved) > self.cfg.num_checkpoint:
            old = self.run_dir / self.saved.popleft()
            if old.exists():
                old.unlink()
            journal.log_event("CHECKPOINT_REMOVED", {"path": str(old)})

    def _end_epoch(self, journal: RunJournal) -> bool:
        """Validate, save and update early stopping; returns True when training should stop."""
        details: Dict[str, Any] = {"epoch": self.epoch, "step": self.step}
        improved = True
        if self.dev_data is not None and len(self.dev_data):
            dev_loss, dev_error = self.evaluate()
            details.update(dev_loss=dev_loss, dev_error=dev_error)
            if self.cfg.report_eva:
                logger.info(f"epoch={self.epoch} dev_loss={dev_loss:.6f} dev_error={dev_error:.4f}")
            improved = dev_loss < self.best_loss or dev_error < self.best_error
            self.best_loss = min(self.best_loss, dev_loss)
            self.best_error = min(self.best_error, dev_error)
        journal.log_event("EPOCH_END", details)
        self.bad_epochs = 0 if improved else self.bad_epochs + 1

        if self.cfg.epoch_save:
            path = self.save(f"epoch_{self.epoch}.ckpt", epoch_done=True)
            journal.log_event("CHECKPOINT_SAVED", {"path": str(path), "epoch": self.epoch})
        if improved:
            path = self.save("best.ckpt", epoch_done=True)
            journal.log_event("BEST_MODEL", {"path": str(path), **details})
            return False
        if self.dev_data is not None and self.bad_epochs >= self.cfg.earlystop:
            logger.info(f"Early stopping after epoch {self.epoch}: "
                        f"{self.bad_epochs} epochs without improvement")
            journal.log_event("EARLY_STOP", details)
            return True
        return False

    def _steps_exhausted(self) -> bool:
        return self.cfg.training_steps is not None and self.step >= self.cfg.training_steps

    def train(self) -> Path:
        """
        Run epochs until maxrun, training_steps or early stopping.

        Returns:
            Path of the best checkpoint (best.ckpt)
        """
        handler = attach_file_handler(self.run_dir / "train.log")
        journal = RunJournal(self.run_dir)
        journal.log_event("RUN_START", {"epoch": self.epoch, "step": self.step,
                                        "parameters": self.model.num_parameters(), "seed": self.cfg.seed})
        reason = "maxrun"
        try:
            while self.epoch <= self.cfg.maxrun:
                if self._steps_exhausted():
                    reason = "training_steps"
                    break
                if self.schedule is None:
                    self.schedule, self.cursor = self.epoch_schedule(self.epoch), 0
                units = self._scheduled_units()
                while True:
                    stats = self.accumulate_and_step(units)
                    if stats is None:
                        break
                    self._report(stats)
                    if (self.cfg.save_every and self.epoch >= self.cfg.epoch_start_checkpoint_save
                            and self.step % self.cfg.save_every == 0):
                        self._rotate(journal)
                    if self._steps_exhausted():
                        break
                if self.cursor < len(self.schedule):
                    reason = "training_steps"
                    break
                stop = self._end_epoch(journal)
                self.epoch += 1
                self.schedule, self.cursor = None, 0
                if stop:
                    reason = "earlystop"
                    break
        finally:
            path = self.save("last.ckpt", full=True)
            journal.log_event("RUN_END", {"reason": reason, "epoch": self.epoch, "step": self.step,
                                          "last": str(path)})
            journal.close()
            detach_file_handler(handler)

        best = self.run_dir / "best.ckpt"
        return best if best.exists() else path
