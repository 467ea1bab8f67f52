"""Orchestrates retrieval, context construction, and inference into detect()."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .context import (
    DEFAULT_MAX_CONTEXT_CHARS,
    HttpEmbedder,
    Mock16Embedder,
    SplitterConfig,
    assemble_context,
    documents_to_index,
    retrieve_top_n,
)
from .inference import (
    DEFAULT_RUNS,
    DEFAULT_TEMPERATURE,
    HttpLLMProvider,
    PromptTemplate,
    ScriptedLLMProvider,
    default_template,
    load_template,
    run_majority,
)
from .models import Document, Prediction, Timing
from .retrieval import (
    EmptyContextError,
    FetchPolicy,
    FileFetcher,
    HttpFetcher,
    HttpSearchProvider,
    MockSearchProvider,
    collect_top_k,
)


class Mode(str, Enum):
    RETRIEVAL = "retrieval"
    ABLATION = "ablation"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ProviderConfig:
    search_mode: str = "mock"  # "mock" | "live"
    search_fixture: Optional[str] = None
    search_url: Optional[str] = None
    search_key: Optional[str] = None
    pages_dir: Optional[str] = None  # fixture pages for the offline fetcher
    embed_mode: str = "mock16"  # "mock16" | "live"
    embed_url: Optional[str] = None
    embed_model: Optional[str] = None
    llm_mode: str = "scripted"  # "scripted" | "live"
    llm_script: Optional[str] = None
    llm_url: Optional[str] = None
    llm_model: Optional[str] = None
    llm_key: Optional[str] = None
    cache_dir: Optional[str] = None
    no_fetch: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    k_documents: int = 3
    retrieved_chunks: int = 5
    runs: int = DEFAULT_RUNS
    temperature: float = DEFAULT_TEMPERATURE
    max_context_chars: int = DEFAULT_MAX_CONTEXT_CHARS
    splitter: SplitterConfig = field(default_factory=SplitterConfig)
    providers: ProviderConfig = field(default_factory=ProviderConfig)
    mode: Mode = Mode.RETRIEVAL
    template_path: Optional[str] = None
    parallel: int = 4

    def __post_init__(self):
        if self.k_documents < 1 or self.retrieved_chunks < 1 or self.runs < 1:
            raise ConfigError("k_documents, retrieved_chunks, and runs must be positive")
        if self.runs % 2 == 0:
            raise ConfigError("runs must be odd so a majority exists")

    def template(self) -> PromptTemplate:
        if self.template_path:
            return load_template(self.template_path)
        return default_template()

    def digest(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class ProviderSet:
    """Concrete provider handles plus the fetch policy, shared across claims."""

    search: object
    fetcher: object
    embedder: object
    llm: object
    policy: FetchPolicy

    def call_counts(self) -> Dict[str, int]:
        return {
            "search": getattr(self.search, "calls", 0),
            "fetch": getattr(self.fetcher, "calls", 0),
            "embed": getattr(self.embedder, "calls", 0),
            "llm": getattr(self.llm, "calls", 0),
        }


def build_providers(config: ProviderConfig) -> ProviderSet:
    if config.search_mode == "mock":
        if not config.search_fixture:
            raise ConfigError("mock search requires a search fixture path")
        search = MockSearchProvider(config.search_fixture)
    elif config.search_mode == "live":
        url = config.search_url or os.environ.get("SEARCH_API_URL")
        if not url:
            raise ConfigError("live search requires SEARCH_API_URL")
        search = HttpSearchProvider(url, config.search_key or os.environ.get("SEARCH_API_KEY"))
    else:
        raise ConfigError(f"unknown search mode {config.search_mode!r}")

    if config.pages_dir:
        pages_dir = Path(config.pages_dir)
        manifest = pages_dir / "pages.json"
        if manifest.exists():
            mapping = {url: pages_dir / name
                       for url, name in json.loads(manifest.read_text(encoding="utf-8")).items()}
        else:
            raise ConfigError(f"pages dir {pages_dir} has no pages.json manifest")
        fetcher = FileFetcher(pages=mapping)
    else:
        fetcher = HttpFetcher()

    if config.embed_mode == "mock16":
        embedder = Mock16Embedder()
    elif config.embed_mode == "live":
        url = config.embed_url or os.environ.get("EMBED_API_URL")
        model = config.embed_model or os.environ.get("EMBED_MODEL")
        if not url or not model:
            raise ConfigError("live embedding requires EMBED_API_URL and EMBED_MODEL")
        embedder = HttpEmbedder(url, model)
    else:
        raise ConfigError(f"unknown embedding mode {config.embed_mode!r}")

    if config.llm_mode == "scripted":
        if not config.llm_script:
            raise ConfigError("scripted LLM requires a transcript path")
        llm = ScriptedLLMProvider(config.llm_script)
    elif config.llm_mode == "live":
        url = config.llm_url or os.environ.get("LLM_API_URL")
        model = config.llm_model or os.environ.get("LLM_MODEL")
        if not url or not model:
            raise ConfigError("live LLM requires LLM_API_URL and LLM_MODEL")
        llm = HttpLLMProvider(url, model, config.llm_key or os.environ.get("LLM_API_KEY"))
    else:
        raise ConfigError(f"unknown llm mode {config.llm_mode!r}")

    cache_dir = config.cache_dir or os.environ.get("MANICHECK_CACHE_DIR")
    policy = FetchPolicy(cache_dir=Path(cache_dir) if cache_dir else None, no_fetch=config.no_fetch)
    return ProviderSet(search=search, fetcher=fetcher, embedder=embedder, llm=llm, policy=policy)


def build_context(claim: str, documents: Sequence[Document], config: PipelineConfig,
                  providers: ProviderSet) -> str:
    """Chunk and embed the documents, then assemble the top chunks for the claim."""
    index = documents_to_index(documents, config.splitter, providers.embedder)
    query_vector = providers.embedder.embed([claim])[0]
    top = retrieve_top_n(index, query_vector, config.retrieved_chunks)
    return assemble_context(top, config.max_context_chars)


def detect(claim: str, config: PipelineConfig, providers: ProviderSet,
           region: Optional[str] = None,
           documents: Optional[Sequence[Document]] = None) -> Prediction:
    """Full two-phase detection of one claim.

    In retrieval mode the claim is searched, pages fetched and indexed, and
    the most similar chunks augment the prompt; in ablation mode the LLM runs
    with no external context. A retrieval that yields no documents degrades
    to the no-context prompt with a recorded warning instead of failing.
    """
    if not claim.strip():
        raise ValueError("claim must be non-empty")
    template = config.template()
    warnings: List[str] = []
    context = ""
    digest: List[tuple] = []

    t0 = time.perf_counter()
    if config.mode is Mode.RETRIEVAL:
        if documents is None:
            try:
                documents = collect_top_k(claim, config.k_documents, providers.search,
                                          providers.policy, fetcher=providers.fetcher,
                                          locale=region)
            except EmptyContextError as exc:
                warnings.append(f"degraded to no-context inference: {exc}")
                documents = []
        if documents:
            context = build_context(claim, documents, config, providers)
            digest = [(doc.url, doc.rank) for doc in documents]
    context_build_seconds = time.perf_counter() - t0

    t1 = time.perf_counter()
    prediction = run_majority(claim, context, template, providers.llm,
                              temperature=config.temperature, runs=config.runs)
    inference_seconds = time.perf_counter() - t1

    return dataclasses.replace(
        prediction,
        context_digest=tuple(digest),
        elapsed=Timing(context_build_seconds=context_build_seconds,
                       inference_seconds=inference_seconds),
        warnings=tuple(warnings),
    )
