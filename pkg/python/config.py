"""
DeskMT: Configuration
=====================
Typed experiment configuration.

Experiment files are flat ``key = value`` text read with python-dotenv;
values are JSON-decoded when they parse (numbers, booleans, lists) and then
validated by pydantic. Several files can be layered, later ones winning,
and explicit overrides (CLI flags) win over all files.

Example file::

    # base.cnfg
    isize = 512
    nlayer = 6
    label_smoothing = 0.1
    forbidden_indexes = [0, 1]

Author: DeskMT Team
Date: 2026-02-04
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigurationError
from logging_config import get_logger

logger = get_logger("deskmt.config")

Variant = Literal["standard", "avg_attn", "transparent", "hierarchical", "rnmt_dec"]


class ModelConfig(BaseModel):
    """Architecture hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    isize: int = Field(512, gt=0, description="Embedding and model dimension")
    nlayer: int = Field(6, ge=1, description="Encoder and decoder layer count")
    ff_hsize: int = Field(2048, gt=0, description="Hidden size of position-wise feed-forward")
    drop: float = Field(0.1, ge=0.0, lt=1.0, description="Feed-forward and residual dropout")
    nhead: int = Field(8, ge=1)
    attn_drop: float = Field(0.1, ge=0.0, lt=1.0)
    attn_hsize: Optional[int] = Field(None, gt=0, description="Attention hidden size, isize when unset")
    cache_len: int = Field(256, gt=0, description="Positions cached in the positional table")
    bindDecoderEmb: bool = Field(True, description="Tie classifier weight to decoder embedding")
    share_emb: bool = Field(False, description="Share encoder and decoder embeddings")
    norm_output: bool = Field(True, description="Final layer normalization on stack outputs")
    variant: Variant = "standard"
    noise: float = Field(0.0, ge=0.0, description="Scale of Gaussian noise on encoder embeddings")

    @model_validator(mode="after")
    def check_shapes(self) -> "ModelConfig":
        if self.attn_hsize is None:
            self.attn_hsize = self.isize
        if self.attn_hsize % self.nhead:
            raise ValueError(f"attn_hsize {self.attn_hsize} is not divisible by nhead {self.nhead}")
        if self.isize % 2:
            raise ValueError(f"isize must be even for the positional embedding, got {self.isize}")
        if self.variant == "hierarchical":
            if "norm_output" in self.model_fields_set and self.norm_output:
                raise ValueError("hierarchical aggregation requires norm_output = false")
            self.norm_output = False
        return self


class TrainConfig(BaseModel):
    """Loss, optimizer, schedule, checkpointing and sampling settings."""

    model_config = ConfigDict(extra="forbid", coerce_numbers_to_str=True)

    run_id: str = "base"
    data_id: str = "data"
    expm_dir: str = "expm"
    cache_dir: str = "cache"
    label_smoothing: float = Field(0.1, ge=0.0, lt=1.0)
    forbidden_indexes: List[int] = Field(default_factory=lambda: [0, 1])
    tokens_optm: int = Field(25000, gt=0, description="Target tokens accumulated per optimizer step")
    warm_step: int = Field(8000, gt=0)
    lr_scale: float = Field(1.0, gt=0.0, description="Multiplier on the warm-up schedule")
    use_ams: bool = False
    weight_decay: float = Field(0.0, ge=0.0)
    maxrun: int = Field(128, ge=1, description="Maximum number of epochs")
    training_steps: Optional[int] = Field(None, ge=1, description="Maximum optimizer steps")
    earlystop: int = Field(8, ge=1, description="Non-improving epochs tolerated")
    save_every: Optional[int] = Field(None, ge=1, description="Steps between checkpoints")
    num_checkpoint: int = Field(4, ge=1)
    epoch_start_checkpoint_save: int = Field(3, ge=1)
    epoch_save: bool = True
    save_optm_state: bool = False
    batch_report: int = Field(2000, ge=1)
    report_eva: bool = True
    dss_ws: float = Field(0.0, ge=0.0, le=1.0)
    dss_rm: float = Field(0.0, ge=0.0, le=1.0)
    seed: int = 666666
    fine_tune_m: Optional[str] = None
    train_statesf: Optional[str] = None
    fine_tune_state: Optional[str] = None

    @field_validator("forbidden_indexes")
    @classmethod
    def sorted_unique(cls, v: List[int]) -> List[int]:
        if any(i < 0 for i in v):
            raise ValueError("forbidden indexes must be non-negative")
        return sorted(set(v))


class BeamConfig(BaseModel):
    """Decoding settings; beam_size 1 is greedy search."""

    model_config = ConfigDict(extra="forbid")

    beam_size: int = Field(4, ge=1)
    alpha: float = Field(0.0, ge=0.0, description="Length penalty exponent")
    max_len: int = Field(256, ge=1, description="Cap on generated tokens, <eos> included")


class RatioThresholds(BaseModel):
    """Upper bounds for the five cleaning ratios."""

    max_cratio: float = Field(..., ge=0.0)
    max_bratio: float = Field(..., ge=0.0)
    max_sratio: float = Field(..., ge=0.0)
    max_uratio: float = Field(..., ge=1.0)
    max_oratio: float = Field(..., ge=1.0)


class ExperimentConfig(BaseModel):
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    beam: BeamConfig = Field(default_factory=BeamConfig)

    def run_dir(self) -> Path:
        return Path(self.train.expm_dir) / self.train.data_id / self.train.run_id


class ServerSettings(BaseSettings):
    """Translation server settings, overridable through DESKMT_* environment variables."""

    model_config = SettingsConfigDict(env_prefix="DESKMT_", env_file=".env", extra="ignore")

    addr: str = "127.0.0.1"
    port: int = Field(8000, ge=1, le=65535)
    models: List[str] = Field(default_factory=list)
    src_vocab: Optional[str] = None
    tgt_vocab: Optional[str] = None
    beam: int = Field(4, ge=1)
    alpha: float = Field(0.0, ge=0.0)
    max_len: int = Field(256, ge=1)
    max_batch: int = Field(64, ge=1, description="Largest number of sentences per request")
    workers: int = Field(4, ge=1, description="Decoding threads")


# ------------------------------
# Loading
# ------------------------------
def decode_value(raw: Optional[str]) -> Any:
    if raw is None:
        return None
    try:
        return json.loads(raw)
    except ValueError:
        lowered = raw.strip().lower()
        if lowered in ("true", "false"):
            return lowered == "true"
        if lowered in ("none", "null", ""):
            return None
        return raw.strip()


def read_config_files(paths: Iterable[Union[str, Path]]) -> Dict[str, Any]:
    """
    Merge flat ``key = value`` files, later files overriding earlier ones.

    Raises:
        ConfigurationError: a file does not exist
    """
    merged: Dict[str, Any] = {}
    for path in paths:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        values = {k: decode_value(v) for k, v in dotenv_values(path).items()}
        logger.debug(f"Loaded {len(values)} keys from {path}")
        merged.update(values)
    return merged


def build_experiment(values: Dict[str, Any]) -> ExperimentConfig:
    """
    Route flat keys to the model, training and beam sections and validate them.

    Raises:
        ConfigurationError: unknown key or invalid value
    """
    sections: Dict[str, Dict[str, Any]] = {"model": {}, "train": {}, "beam": {}}
    owners = {
        "model": ModelConfig.model_fields,
        "train": TrainConfig.model_fields,
        "beam": BeamConfig.model_fields,
    }
    for key, value in values.items():
        for section, fields in owners.items():
            if key in fields:
                sections[section][key] = value
                break
        else:
            raise ConfigurationError(f"unknown configuration key: {key}")
    try:
        return ExperimentConfig(
            model=ModelConfig(**sections["model"]),
            train=TrainConfig(**sections["train"]),
            beam=BeamConfig(**sections["beam"]),
        )
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


def load_experiment(paths: Iterable[Union[str, Path]] = (),
                    overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    values = read_config_files(paths)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_experiment(values)


def load_thresholds(path: Union[str, Path]) -> RatioThresholds:
    try:
        return RatioThresholds(**read_config_files([path]))
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e


def write_config(path: Union[str, Path], values: Dict[str, Any]) -> None:
    """Write a flat config fragment that read_config_files can load back."""
    lines = [f"{key} = {json.dumps(value)}" for key, value in values.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
