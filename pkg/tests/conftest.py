import json
import socket
from pathlib import Path

import pytest

from manicheck.inference import build_prompt, prompt_digest
from manicheck.pipeline import (
    Mode,
    PipelineConfig,
    ProviderConfig,
    build_context,
    build_providers,
)
from manicheck.retrieval import collect_top_k

FIXTURES = Path(__file__).parent / "fixtures"

GOLDEN_CLAIM = "Mexico wins its first medal in Paris Olympic"
GOLDEN_ORIGINAL = "Ukraine"
GOLDEN_REPLACEMENT = "Mexico"
GOLDEN_RESPONSE = (
    "The retrieved context consistently reports that Ukraine won its first medal "
    "at the Paris Olympic Games, while Mexico was still waiting for a first podium "
    "finish. The country name in the statement contradicts the context. False"
)


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


def golden_provider_config(tmp_path: Path, responses=None, repeats: int = 9) -> ProviderConfig:
    """Provider config for the golden fixture, with a transcript generated to
    match the deterministic context the pipeline will build."""
    script_path = tmp_path / "transcript.json"
    script_path.write_text("{}", encoding="utf-8")
    base = ProviderConfig(
        search_fixture=str(FIXTURES / "search.json"),
        pages_dir=str(FIXTURES / "pages"),
        llm_script=str(script_path),
    )
    config = PipelineConfig(providers=base)
    probe = build_providers(base)
    documents = collect_top_k(GOLDEN_CLAIM, config.k_documents, probe.search,
                              probe.policy, fetcher=probe.fetcher)
    context = build_context(GOLDEN_CLAIM, documents, config, probe)
    system_text, user_text = build_prompt(GOLDEN_CLAIM, context, config.template())
    digest = prompt_digest(system_text, user_text)
    transcript = {digest: (responses or [GOLDEN_RESPONSE]) * repeats}
    script_path.write_text(json.dumps(transcript), encoding="utf-8")
    return base


@pytest.fixture
def golden_config(tmp_path) -> PipelineConfig:
    return PipelineConfig(providers=golden_provider_config(tmp_path))


@pytest.fixture
def no_network(monkeypatch):
    """Fail the test if anything opens a real network connection."""

    def guard(*args, **kwargs):
        raise AssertionError("live network connection attempted during offline test")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket, "create_connection", guard)
