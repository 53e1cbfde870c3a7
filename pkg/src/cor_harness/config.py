"""Run configuration: loading, validation, canonical hashing.

Config files are JSON or YAML with nested sections (dataset, prompting,
retriever, backend, judge, emit). CLI overrides patch individual keys
before validation. The config hash is a sha256 over the fully-resolved
canonical JSON so reports can state exactly what produced them.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .prompting import ReasoningMode


class ConfigError(Exception):
    """Raised when a run configuration is invalid (CLI exit code 1)."""


DEFAULTS: dict = {
    "dataset": {"path": None},
    "prompting": {"mode": "cor", "template": None, "shuffle_contexts": False},
    "retriever": {"k1": 1.2, "b": 0.75, "k": 10},
    "backend": {
        "kind": "http",
        "url": None,
        "model": None,
        "script": None,
        "text": None,
        "max_in_flight": 4,
        "max_new_tokens": 256,
        "temperature": 0.0,
        "seed": None,
        "max_retries": 3,
        "timeout": 60.0,
    },
    "judge": {
        "kind": "http",
        "url": None,
        "model": None,
        "script": None,
        "text": None,
        "max_in_flight": 4,
        "seed": 0,
    },
    "emit": {
        "p_golden": 1.0,
        "k": None,  # falls back to retriever.k
        "seed": 0,
        "distractor_source": "retrieved",
        "out": None,
        "reasoning_prompt": None,
        "cache_dir": None,
    },
    "out_dir": None,
    "seed": 0,
    "forced_ranking": None,
}

_BACKEND_KINDS = ("http", "oracle", "adversarial", "scripted", "constant")


def _deep_merge(base: dict, override: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


@dataclass
class RunConfig:
    data: dict

    def __getitem__(self, key: str):
        return self.data[key]

    def section(self, name: str) -> dict:
        return self.data[name]

    @property
    def mode(self) -> ReasoningMode:
        return ReasoningMode.parse(self.data["prompting"]["mode"])

    @property
    def k(self) -> int:
        return int(self.data["retriever"]["k"])

    def config_hash(self) -> str:
        canonical = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Load, patch, and validate a run configuration."""
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        text = path.read_text(encoding="utf-8")
        try:
            if path.suffix in (".yaml", ".yml"):
                raw = yaml.safe_load(text) or {}
            else:
                raw = json.loads(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a mapping")
    merged = _deep_merge(DEFAULTS, raw)
    if overrides:
        merged = _deep_merge(merged, overrides)
    config = RunConfig(merged)
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    data = config.data
    try:
        mode = config.mode
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    retriever = data["retriever"]
    if not isinstance(retriever["k"], int) or retriever["k"] < 1:
        raise ConfigError(f"retriever.k must be an integer >= 1, got {retriever['k']!r}")
    for key in ("k1", "b"):
        if not isinstance(retriever[key], (int, float)):
            raise ConfigError(f"retriever.{key} must be numeric")

    backend = data["backend"]
    if backend["kind"] not in _BACKEND_KINDS:
        raise ConfigError(f"backend.kind must be one of {_BACKEND_KINDS}, got {backend['kind']!r}")
    if backend["kind"] == "http" and not backend["url"]:
        raise ConfigError("backend.kind=http requires backend.url")
    if backend["kind"] == "scripted" and not backend["script"]:
        raise ConfigError("backend.kind=scripted requires backend.script")
    if backend["kind"] == "constant" and backend["text"] is None:
        raise ConfigError("backend.kind=constant requires backend.text")
    if backend["max_in_flight"] < 1:
        raise ConfigError("backend.max_in_flight must be >= 1")

    emit = data["emit"]
    if not 0.0 <= float(emit["p_golden"]) <= 1.0:
        raise ConfigError(f"emit.p_golden must lie in [0, 1], got {emit['p_golden']}")
    if emit["k"] is not None and (not isinstance(emit["k"], int) or emit["k"] < 1):
        raise ConfigError(f"emit.k must be an integer >= 1, got {emit['k']!r}")
    if emit["distractor_source"] not in ("retrieved", "random"):
        raise ConfigError(f"emit.distractor_source must be 'retrieved' or 'random'")

    forced = data["forced_ranking"]
    if forced is not None:
        if mode not in (ReasoningMode.COR, ReasoningMode.COR_PLUS_COT):
            raise ConfigError(f"forced_ranking requires a cor-family mode, got {mode.value}")
        if forced not in ("correct", "wrong") and not _is_position_list(forced):
            raise ConfigError(
                f"forced_ranking must be 'correct', 'wrong', or a comma list of positions, got {forced!r}"
            )

    dataset_path = data["dataset"]["path"]
    if dataset_path is not None and not Path(dataset_path).exists():
        raise ConfigError(f"dataset.path {dataset_path} does not exist")
    template = data["prompting"]["template"]
    if template is not None and not Path(template).exists():
        raise ConfigError(f"prompting.template {template} does not exist")


def _is_position_list(value) -> bool:
    if not isinstance(value, str):
        return False
    parts = [p.strip() for p in value.split(",")]
    return bool(parts) and all(p.isdigit() and int(p) >= 1 for p in parts)


def parse_forced_ranking(value: str | None) -> tuple[str, list[int]] | None:
    """Normalize the forced-ranking setting into (policy, fixed positions)."""
    if value is None:
        return None
    if value in ("correct", "wrong"):
        return value, []
    return "fixed", [int(p.strip()) for p in value.split(",")]
