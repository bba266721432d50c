import socket
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pytest

from backend.config import load_config
from backend.llm.gateway import LlmScript, ScriptedBackend
from backend.models import ApiKind, Evidence, LlmScriptEntry, RoleTag, SearchNode
from backend.storage.search_graph import SearchGraph
from backend.utils.prompts import PromptLibrary

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
SCENARIO_CONFIG = FIXTURES / "scenario" / "engine.json"
BENCH_CONFIG = FIXTURES / "bench" / "engine.json"
BENCH_QUESTIONS = FIXTURES / "bench" / "questions.jsonl"

NOW = datetime(2024, 10, 15, 12, 0, tzinfo=timezone.utc)


@pytest.fixture(autouse=True)
def no_network(monkeypatch):
    """Offline suite: any outbound connection fails the test"""
    def guard(*args, **kwargs):
        raise RuntimeError("network access attempted in offline tests")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket, "create_connection", guard)


def scripted(*entries: Tuple[RoleTag, str]) -> ScriptedBackend:
    return ScriptedBackend(LlmScript([LlmScriptEntry(role=r, response=t) for r, t in entries]))


def make_graph(edges: List[Tuple[str, str]], nodes: Optional[List[str]] = None,
               api: Optional[ApiKind] = ApiKind.NEWS) -> SearchGraph:
    """Graph whose root is the first node; every node queries ``q-<id>``"""
    ids = list(nodes or [])
    for src, dst in edges:
        for node_id in (src, dst):
            if node_id not in ids:
                ids.append(node_id)
    graph = SearchGraph()
    for node_id in ids:
        graph.add_node(SearchNode(id=node_id, query=f"q-{node_id}", api=api))
    for src, dst in edges:
        graph.add_edge(src, dst)
    return graph


def evidence(content: str, published_at: Optional[datetime] = None,
             retrieved_at: datetime = NOW, source: str = "Test Wire", **extra) -> Evidence:
    slug = "-".join(content.lower().split())[:60]
    return Evidence(content=content, source_name=source, source_url=f"https://example.com/{slug}",
                    published_at=published_at, retrieved_at=retrieved_at, **extra)


class FakeHub:
    """
    Connector hub double. Returns one item per query unless a query is
    listed in ``responses`` or ``failures``; records every call.
    """

    def __init__(self, responses: Dict[str, List[Evidence]] = None,
                 failures: Dict[str, Exception] = None, delay: float = 0.0):
        self.responses = responses or {}
        self.failures = failures or {}
        self.delay = delay
        self.calls: List[Tuple[ApiKind, str]] = []
        self._lock = threading.Lock()

    def execute(self, api: ApiKind, query: str, now: datetime):
        with self._lock:
            self.calls.append((api, query))
        if self.delay:
            threading.Event().wait(self.delay)
        if query in self.failures:
            raise self.failures[query]
        items = self.responses.get(query)
        if items is None:
            items = [evidence(f"result for {query}", published_at=now - timedelta(hours=2),
                              retrieved_at=now)]
        return items, now


@pytest.fixture
def prompts():
    return PromptLibrary()


@pytest.fixture
def scenario_config():
    return load_config(SCENARIO_CONFIG)


@pytest.fixture
def bench_config():
    return load_config(BENCH_CONFIG)
