"""
DeskMT: Run Journal
===================
Structured JSONL event log written next to a training run's checkpoints.

One JSON object per line with version, UTC timestamp, event type and details,
e.g. epoch summaries, checkpoint writes and removals, early stopping.

Author: DeskMT Team
Date: 2026-02-07
"""

import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

JOURNAL_NAME = "journal.jsonl"

EVENT_TYPES = (
    "RUN_START",
    "EPOCH_END",
    "CHECKPOINT_SAVED",
    "CHECKPOINT_REMOVED",
    "BEST_MODEL",
    "EARLY_STOP",
    "RUN_END",
)


class RunJournal:
    def __init__(self, run_dir: Union[str, Path]):
        self.path = Path(run_dir) / JOURNAL_NAME
        self._setup_logger()

    def _setup_logger(self):
        """Dedicated non-propagating logger with a plain message formatter."""
        self.path.parent.mkdir(parents=True, exist_ok=True)
        key = hashlib.sha256(str(self.path.resolve()).encode()).hexdigest()[:12]
        self.logger = logging.getLogger(f"deskmt.journal.{key}")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False
        for old in list(self.logger.handlers):
            self.logger.removeHandler(old)
            old.close()
        self._handler = logging.FileHandler(self.path, encoding="utf-8")
        self._handler.setFormatter(logging.Formatter("%(message)s"))
        self.logger.addHandler(self._handler)

    def log_event(self, event_type: str, details: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Append one event.

        Args:
            event_type: one of EVENT_TYPES
            details: JSON-serializable context
        """
        if event_type not in EVENT_TYPES:
            raise ValueError(f"unknown journal event type {event_type!r}")
        entry = {
            "version": "1.0",
            "timestamp": datetime.now(timezone.utc).replace(tzinfo=None).isoformat() + "Z",
            "event_type": event_type,
            "details": details or {},
        }
        self.logger.info(json.dumps(entry, sort_keys=True))
        return entry

    def close(self) -> None:
        self.logger.removeHandler(self._handler)
        self._handler.close()


def read_journal(path: Union[str, Path]) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
