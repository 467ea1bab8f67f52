"""Flat key=value config files and precedence merging (flags > env > file > defaults)."""
from __future__ import annotations

import os
from pathlib import Path
from typing import Dict, Optional

from .context import SplitterConfig
from .pipeline import ConfigError, Mode, PipelineConfig, ProviderConfig

# Environment variables honored without flags.
ENV_KEYS = {
    "search.url": "SEARCH_API_URL",
    "search.key": "SEARCH_API_KEY",
    "embed.url": "EMBED_API_URL",
    "embed.model": "EMBED_MODEL",
    "llm.url": "LLM_API_URL",
    "llm.model": "LLM_MODEL",
    "llm.key": "LLM_API_KEY",
    "cache.dir": "MANICHECK_CACHE_DIR",
}


def load_config_file(path: str | Path) -> Dict[str, str]:
    """Parse a flat `key = value` text file with # comments."""
    values: Dict[str, str] = {}
    for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_number}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def merge_settings(flags: Dict[str, Optional[str]],
                   config_path: Optional[str] = None) -> Dict[str, str]:
    """Apply the precedence chain; flag values of None mean 'not given'."""
    merged: Dict[str, str] = {}
    if config_path:
        merged.update(load_config_file(config_path))
    for key, env_name in ENV_KEYS.items():
        value = os.environ.get(env_name)
        if value:
            merged[key] = value
    for key, value in flags.items():
        if value is not None:
            merged[key] = str(value)
    return merged


def _get_int(settings: Dict[str, str], key: str, default: int) -> int:
    try:
        return int(settings.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {settings[key]!r}") from exc


def _get_float(settings: Dict[str, str], key: str, default: float) -> float:
    try:
        return float(settings.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {settings[key]!r}") from exc


def _get_bool(settings: Dict[str, str], key: str, default: bool = False) -> bool:
    raw = settings.get(key)
    if raw is None:
        return default
    return str(raw).strip().lower() in ("1", "true", "yes", "on")


def pipeline_config_from_settings(settings: Dict[str, str]) -> PipelineConfig:
    splitter = SplitterConfig(
        chunk_size=_get_int(settings, "chunk_size", 100),
        overlap=_get_int(settings, "overlap", 20),
    )
    providers = ProviderConfig(
        search_mode=settings.get("search.mode", "mock"),
        search_fixture=settings.get("search.fixture"),
        search_url=settings.get("search.url"),
        search_key=settings.get("search.key"),
        pages_dir=settings.get("pages.dir"),
        embed_mode=settings.get("embed.mode", "mock16"),
        embed_url=settings.get("embed.url"),
        embed_model=settings.get("embed.model"),
        llm_mode=settings.get("llm.mode", "scripted"),
        llm_script=settings.get("llm.script"),
        llm_url=settings.get("llm.url"),
        llm_model=settings.get("llm.model"),
        llm_key=settings.get("llm.key"),
        cache_dir=settings.get("cache.dir"),
        no_fetch=_get_bool(settings, "no_fetch"),
    )
    mode = Mode(settings.get("mode", "retrieval"))
    return PipelineConfig(
        k_documents=_get_int(settings, "k_documents", 3),
        retrieved_chunks=_get_int(settings, "retrieved_chunks", 5),
        runs=_get_int(settings, "runs", 3),
        temperature=_get_float(settings, "temperature", 0.1),
        max_context_chars=_get_int(settings, "max_context_chars", 4000),
        splitter=splitter,
        providers=providers,
        mode=mode,
        template_path=settings.get("template_path"),
        parallel=_get_int(settings, "parallel", 4),
    )
