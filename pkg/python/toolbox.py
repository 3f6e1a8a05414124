"""
DeskMT: Toolbox
===============
Checkpoint averaging, parameter freezing and tensor padding.

Author: DeskMT Team
Date: 2026-02-09
"""

from collections import OrderedDict
from pathlib import Path
from typing import Iterable, List, Sequence, Union

import numpy as np

from checkpoint import Checkpoint, load_checkpoint
from errors import ConfigurationError, DimensionError, FormatError
from logging_config import get_logger
from modules import Module

logger = get_logger("deskmt.toolbox")


def average_checkpoints(paths: Sequence[Union[str, Path]]) -> Checkpoint:
    """
    Elementwise mean of the named parameters of several checkpoints.

    Accumulates in float64 and stores float32. The META section of the first
    checkpoint is kept; optimizer and training state are dropped.

    Raises:
        ConfigurationError: no paths given
        FormatError: parameter names or shapes differ (names the first divergent parameter)
    """
    if not paths:
        raise ConfigurationError("average_checkpoints needs at least one checkpoint")
    # Sorting the inputs makes the float64 sum independent of argument order.
    ckpts = [load_checkpoint(p) for p in sorted(str(p) for p in paths)]
    first = ckpts[0]
    names = list(first.params)
    for path, ckpt in zip(sorted(str(p) for p in paths), ckpts):
        for name in names:
            if name not in ckpt.params:
                raise FormatError(f"{path}: parameter {name!r} missing")
            if ckpt.params[name].shape != first.params[name].shape:
                raise FormatError(f"{path}: parameter {name!r} has shape {ckpt.params[name].shape}, "
                                  f"expected {first.params[name].shape}")
        extra = [n for n in ckpt.params if n not in first.params]
        if extra:
            raise FormatError(f"{path}: unexpected parameter {extra[0]!r}")

    averaged: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for name in names:
        total = np.zeros(first.params[name].shape, dtype=np.float64)
        for ckpt in ckpts:
            total += ckpt.params[name].astype(np.float64)
        averaged[name] = (total / len(ckpts)).astype(np.float32)
    logger.info(f"Averaged {len(ckpts)} checkpoints over {len(names)} parameters")
    return Checkpoint(params=averaged, meta=dict(first.meta))


def _resolve(model: Module, names: Iterable[str]):
    params = dict(model.named_parameters())
    selected = []
    for name in names:
        if name not in params:
            raise ConfigurationError(f"unknown parameter {name!r}")
        selected.append(params[name])
    return selected


def freeze_params(model: Module, names: Iterable[str]) -> None:
    """Exclude parameters from optimizer updates; gradients still flow through them."""
    for p in _resolve(model, names):
        p.frozen = True


def unfreeze_params(model: Module, names: Iterable[str]) -> None:
    for p in _resolve(model, names):
        p.frozen = False


def pad_tensors(tensors: Sequence[np.ndarray], dim: int = 0) -> List[np.ndarray]:
    """
    Zero-pad arrays along ``dim`` to the largest size in the list.

    Raises:
        DimensionError: the arrays disagree on rank or on any other dimension
    """
    if not tensors:
        return []
    arrays = [np.asarray(t) for t in tensors]
    ndim = arrays[0].ndim
    if not -ndim <= dim < ndim:
        raise DimensionError(f"dim {dim} out of range for rank {ndim}")
    dim %= ndim
    ref = arrays[0].shape
    for a in arrays[1:]:
        if a.ndim != ndim or any(a.shape[i] != ref[i] for i in range(ndim) if i != dim):
            raise DimensionError(f"cannot pad {a.shape} against {ref} along dim {dim}")
    target = max(a.shape[dim] for a in arrays)
    out = []
    for a in arrays:
        widths = [(0, 0)] * ndim
        widths[dim] = (0, target - a.shape[dim])
        out.append(np.pad(a, widths) if target != a.shape[dim] else a)
    return out
