"""
DeskMT: Error Types
===================
Exception hierarchy shared by every module. The CLI and the REST server map
these onto exit codes and HTTP status codes.

Author: DeskMT Team
Date: 2026-02-02
"""


class DeskMTError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(DeskMTError, ValueError):
    """Operand shapes do not fit together."""


class ContractError(DeskMTError, RuntimeError):
    """A precondition of an operation was violated by the caller."""


class ConfigurationError(DeskMTError, ValueError):
    """Invalid configuration value or incompatible components."""


class FormatError(DeskMTError, ValueError):
    """Malformed or truncated file (dataset, checkpoint, vocabulary)."""


class DeskIndexError(DeskMTError, IndexError):
    """Index outside the valid range, e.g. a token id beyond the vocabulary."""
