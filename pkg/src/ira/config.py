"""Run configuration: one human-editable JSON file with a content hash.

The file has one section per concern; anything omitted falls back to the
defaults below. Reports record the config hash (and the cost-model hash) so
joins across runs can refuse to compare unlike configurations.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Optional

from .backup import BaselineCacheConfig, PipelineConfig
from .store import CostModel
from .workload import GeneratorParams


class ConfigError(Exception):
    """Config file missing, malformed, or inconsistent with its use."""


DEFAULT_CONFIG: Dict[str, Any] = {
    "generator": GeneratorParams().as_dict(),
    "cost_model": CostModel().as_dict(),
    "baseline_cache": {"accounts": 100_000, "storage": 1_000_000, "codes": 10_000},
    "pipeline": {
        "batch_size": 32,
        "channel_capacity": 100,
        "warmup_blocks": 32,
        "warmup_buffer_entries": 134_217_728,
        "workers": 1,
    },
    "hint_codec": "zlib",
}


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def content_hash(obj: Any) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: Optional[Path]) -> Dict[str, Any]:
    """Merge a config file over the defaults (defaults alone if no path)."""
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    try:
        with open(path, "r", encoding="utf-8") as f:
            user = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(user) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return _deep_merge(DEFAULT_CONFIG, user)


def generator_params(config: Dict[str, Any], seed: Optional[int] = None) -> GeneratorParams:
    data = dict(config["generator"])
    if seed is not None:
        data["seed"] = seed
    try:
        params = GeneratorParams.from_dict(data)
        params.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator section: {exc}") from None
    return params


def cost_model(config: Dict[str, Any]) -> CostModel:
    try:
        return CostModel.from_dict(config["cost_model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad cost_model section: {exc}") from None


def baseline_cache(config: Dict[str, Any]) -> BaselineCacheConfig:
    try:
        return BaselineCacheConfig(**{k: int(v) for k, v in config["baseline_cache"].items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad baseline_cache section: {exc}") from None


def pipeline_config(
    config: Dict[str, Any],
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
    channel_capacity: Optional[int] = None,
) -> PipelineConfig:
    section = dict(config["pipeline"])
    if workers is not None:
        section["workers"] = workers
    if batch_size is not None:
        section["batch_size"] = batch_size
    if channel_capacity is not None:
        section["channel_capacity"] = channel_capacity
    try:
        cfg = PipelineConfig(**{k: int(v) for k, v in section.items()})
        cfg.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad pipeline section: {exc}") from None
    return cfg
