"""Run configuration: a flat key/value config file plus CLI overrides.

Config files are plain text, one `key = value` per line, `#` comments
allowed.  Booleans are true/false; unknown keys are an error.  CLI flags
override file values which override the defaults below.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

from .relate import RELATIONAL_MODES


@dataclass
class RunConfig:
    seed: int = 0
    # model dims (desk-scale defaults)
    word_dim: int = 64
    ctx_dim: int = 64
    hidden_dim: int = 64
    attn_dim: int = 64
    answer_dim: int = 64
    context_layers: int = 2
    oov_buckets: int = 64
    separate_tables: bool = False
    embedding_file: str = ""
    dropout: float = 0.0
    relational_mode: str = "full"
    # retrieval
    retrieval_corpus: str = ""
    retrieval_topk: int = 10
    dictionary_mode: bool = False
    # optimizer
    optimizer: str = "adamax"
    lr: float = 2e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    epochs: int = 30
    # metrics
    tau: float = 0.5
    lowercase: bool = True
    strip_punct: bool = False

    def validate(self) -> "RunConfig":
        for name in ("word_dim", "ctx_dim", "hidden_dim", "attn_dim", "answer_dim", "oov_buckets"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.ctx_dim % 2 or self.hidden_dim % 2:
            raise ValueError("ctx_dim and hidden_dim must be even (bidirectional halves)")
        if not (1 <= self.context_layers <= 3):
            raise ValueError("context_layers must be in [1, 3]")
        if self.relational_mode not in RELATIONAL_MODES:
            raise ValueError(f"relational_mode must be one of {RELATIONAL_MODES}")
        if self.optimizer != "adamax":
            raise ValueError("only the adamax optimizer is supported")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.retrieval_topk < 1:
            raise ValueError("retrieval_topk must be >= 1")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must be in (0, 1]")
        return self


# fields that determine parameter shapes; checkpoints refuse to load under a
# different architecture unless forced
ARCH_FIELDS = (
    "word_dim",
    "ctx_dim",
    "hidden_dim",
    "attn_dim",
    "answer_dim",
    "context_layers",
    "oov_buckets",
    "separate_tables",
    "embedding_file",
)


def config_hash(config: RunConfig) -> str:
    arch = {name: getattr(config, name) for name in ARCH_FIELDS}
    return hashlib.sha256(json.dumps(arch, sort_keys=True).encode("utf-8")).hexdigest()


def _coerce(name: str, kind, raw: str):
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes"):
            return True
        if lowered in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {name!r}: expected true/false, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as exc:
        raise ValueError(f"config key {name!r}: cannot parse {raw!r} as {kind.__name__}") from exc


def load_config_file(path: str | Path) -> dict:
    """Parse `key = value` lines into an override dict (typed per RunConfig)."""
    types = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"int": int, "float": float, "str": str, "bool": bool}
    overrides: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected `key = value`")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}: line {lineno}: unknown config key {key!r}")
            overrides[key] = _coerce(key, kinds[str(types[key])], value)
    return overrides


def make_config(config_file: str | Path | None = None, **overrides) -> RunConfig:
    values: dict = {}
    if config_file:
        values.update(load_config_file(config_file))
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return RunConfig(**values).validate()


def config_to_dict(config: RunConfig) -> dict:
    return dataclasses.asdict(config)
