"""Run configuration: a flat key-value document with env-var overrides.

Precedence, lowest to highest: built-in defaults, config file values,
environment variables (DOCARG_<KEY>), explicit overrides (CLI flags).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Mapping

from .backbone import ModelConfig
from .errors import UsageError

ENV_PREFIX = "DOCARG_"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class RunConfig:
    hidden: int = 32
    layers: int = 2
    heads: int = 4
    ffn: int = 64
    max_context: int = 256
    prefix_len: int = 40
    seed: int = 0
    lr: float = 2e-5
    weight_decay: float = 0.01
    batch_size: int = 4
    steps: int = 200
    eval_every: int = 0
    l_max: int = 10
    use_structure: bool = True
    use_co: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            hidden=self.hidden,
            layers=self.layers,
            heads=self.heads,
            ffn=self.ffn,
            vocab_size=vocab_size,
            max_context=self.max_context,
            prefix_len=self.prefix_len,
            seed=self.seed,
        )


def _coerce(name: str, kind: type, raw: object) -> object:
    if kind is bool:
        if isinstance(raw, bool):
            return raw
        text = str(raw).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise UsageError(f"config key {name!r}: cannot parse boolean from {raw!r}")
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config key {name!r}: expected {kind.__name__}, got {raw!r}") from exc


def load_run_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> RunConfig:
    env = os.environ if env is None else env
    kinds = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "bool": bool}
    kinds = {k: types[v] if isinstance(v, str) else v for k, v in kinds.items()}
    values: dict[str, object] = {}

    if path is not None:
        file_path = Path(path)
        if not file_path.exists():
            raise UsageError(f"config file not found: {file_path}")
        try:
            loaded = json.loads(file_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{file_path}: invalid JSON config: {exc.msg}")
        if not isinstance(loaded, dict):
            raise UsageError(f"{file_path}: config must be a flat JSON object")
        for key, raw in loaded.items():
            if key not in kinds:
                raise UsageError(f"{file_path}: unknown config key {key!r}")
            values[key] = _coerce(key, kinds[key], raw)

    for key, kind in kinds.items():
        raw = env.get(ENV_PREFIX + key.upper())
        if raw is not None:
            values[key] = _coerce(key, kind, raw)

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in kinds:
            raise UsageError(f"unknown config override {key!r}")
        values[key] = _coerce(key, kinds[key], raw)

    return RunConfig(**values)
