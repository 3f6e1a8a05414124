"""
DeskMT: Checkpoint Container
============================
Binary checkpoint holding named float32 parameters, an optional optimizer
section and an optional training-state section.

Layout (little-endian)::

    "NTCK" | u32 version
    sections: 4-byte tag | u64 payload length | payload
      META  JSON: model config, vocabulary sizes, seed
      PARM  u32 count, records (u32 name len, name, u32 ndim, u32 dims, f32 data)
      OPTM  u64 JSON length, JSON (step, counts), records as in PARM named "<buffer>/<param>"
      TRST  JSON training state
    "END " | u64 0

Author: DeskMT Team
Date: 2026-02-08
"""

import io
import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Union

import numpy as np

from config import ModelConfig
from errors import FormatError
from logging_config import get_logger
from nmt import NMT

logger = get_logger("deskmt.checkpoint")

MAGIC = b"NTCK"
VERSION = 1
_BUFFERS = ("exp_avg", "exp_avg_sq", "max_exp_avg_sq")


@dataclass
class Checkpoint:
    params: "OrderedDict[str, np.ndarray]"
    meta: Dict[str, Any] = field(default_factory=dict)
    optimizer: Optional[Dict[str, Any]] = None
    training: Optional[Dict[str, Any]] = None


# ------------------------------
# Records
# ------------------------------
def _write_records(out: BinaryIO, arrays: "OrderedDict[str, np.ndarray]") -> None:
    out.write(struct.pack("<I", len(arrays)))
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        out.write(struct.pack("<I", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<I", array.ndim))
        out.write(struct.pack(f"<{array.ndim}I", *array.shape))
        out.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data = data
        self.pos = 0
        self.where = where

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.where}: truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_records(reader: _Reader) -> "OrderedDict[str, np.ndarray]":
    (count,) = reader.unpack("<I")
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    return arrays


# ------------------------------
# Save / load
# ------------------------------
def _section(out: BinaryIO, tag: bytes, payload: bytes) -> None:
    out.write(tag)
    out.write(struct.pack("<Q", len(payload)))
    out.write(payload)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<I", VERSION))
    _section(body, b"META", json.dumps(ckpt.meta, sort_keys=True).encode("utf-8"))

    params = io.BytesIO()
    _write_records(params, ckpt.params)
    _section(body, b"PARM", params.getvalue())

    if ckpt.optimizer is not None:
        header = json.dumps({"step": ckpt.optimizer["step"], "counts": ckpt.optimizer["counts"]},
                            sort_keys=True).encode("utf-8")
        buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for key in _BUFFERS:
            for name, array in ckpt.optimizer.get(key, {}).items():
                buffers[f"{key}/{name}"] = array
        optm = io.BytesIO()
        optm.write(struct.pack("<Q", len(header)))
        optm.write(header)
        _write_records(optm, buffers)
        _section(body, b"OPTM", optm.getvalue())

    if ckpt.training is not None:
        _section(body, b"TRST", json.dumps(ckpt.training, sort_keys=True).encode("utf-8"))
    _section(body, b"END ", b"")

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(body.getvalue())
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Raises:
        FormatError: bad magic, unsupported version, truncation or unknown section
    """
    path = Path(path)
    reader = _Reader(path.read_bytes(), str(path))
    if reader.take(4) != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")

    ckpt = Checkpoint(params=OrderedDict())
    seen_end = False
    while not seen_end:
        tag = reader.take(4)
        (length,) = reader.unpack("<Q")
        section = _Reader(reader.take(length), f"{path}:{tag.decode('ascii', 'replace')}")
        if tag == b"META":
            ckpt.meta = json.loads(section.data)
        elif tag == b"PARM":
            ckpt.params = _read_records(section)
        elif tag == b"OPTM":
            (header_len,) = section.unpack("<Q")
            header = json.loads(section.take(header_len))
            optimizer: Dict[str, Any] = {"step": header["step"], "counts": header["counts"]}
            for key in _BUFFERS:
                optimizer[key] = {}
            for name, array in _read_records(section).items():
                key, _, pname = name.partition("/")
                optimizer.setdefault(key, {})[pname] = array
            ckpt.optimizer = optimizer
        elif tag == b"TRST":
            ckpt.training = json.loads(section.data)
        elif tag == b"END ":
            seen_end = True
        else:
            raise FormatError(f"{path}: unknown section {tag!r}")
    return ckpt


# ------------------------------
# Model helpers
# ------------------------------
def model_meta(model) -> Dict[str, Any]:
    return {
        "model": model.config.model_dump(),
        "src_vocab_size": model.src_vocab_size,
        "tgt_vocab_size": model.tgt_vocab_size,
        "seed": model.streams.seed,
    }


def checkpoint_from_model(model, optimizer=None, training: Optional[Dict[str, Any]] = None) -> Checkpoint:
    return Checkpoint(
        params=model.state_dict(),
        meta=model_meta(model),
        optimizer=optimizer.state_dict() if optimizer is not None else None,
        training=training,
    )


def build_model(ckpt: Checkpoint):
    """Rebuild the model described by a checkpoint's META section and load its parameters."""
    if "model" not in ckpt.meta:
        raise FormatError("checkpoint has no model description")
    model = NMT(ModelConfig(**ckpt.meta["model"]), ckpt.meta["src_vocab_size"],
                ckpt.meta["tgt_vocab_size"], seed=ckpt.meta.get("seed", 0))
    model.load_state_dict(ckpt.params)
    return model


def load_model(path: Union[str, Path]):
    model = build_model(load_checkpoint(path))
    model.eval()
    return model
