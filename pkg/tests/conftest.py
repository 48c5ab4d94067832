from __future__ import annotations

from pathlib import Path

import pytest

from sqlgov.knowledge_base import KnowledgeStore
from sqlgov.providers import HashingEmbedding, ScriptedLLM
from sqlgov.seeds import seed_snapshot

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def nested_query() -> str:
    return (FIXTURES / "nested_query.sql").read_text()


@pytest.fixture(scope="session")
def nested_rewrite() -> str:
    return (FIXTURES / "nested_rewrite_golden.sql").read_text()


@pytest.fixture(scope="session")
def union_query() -> str:
    return (FIXTURES / "union_star_query.sql").read_text()


@pytest.fixture(scope="session")
def union_rewrite() -> str:
    return (FIXTURES / "union_star_rewrite_golden.sql").read_text()


@pytest.fixture(scope="session")
def embedder() -> HashingEmbedding:
    return HashingEmbedding(768)


@pytest.fixture()
def seeded_store(embedder) -> KnowledgeStore:
    return KnowledgeStore(seed_snapshot(embedder), embedder)


@pytest.fixture()
def playbook_llm() -> ScriptedLLM:
    return ScriptedLLM.from_path(FIXTURES / "playbook.jsonl", strict=True)
