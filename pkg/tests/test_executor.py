import json
import random

import pytest

from backend.agents.executor import SearchExecutor
from backend.agents.rewriter import QueryRewriterAgent, parse_rewrite_response, summarize_response
from backend.errors import FixtureMiss, PlanInvalid, RewriterParseError
from backend.models import ExecutionOptions, NodeStatus, RoleTag
from backend.storage.search_graph import SearchGraph
from backend.utils.logger import ExecutionEventLog

from conftest import NOW, FakeHub, evidence, make_graph, scripted

TRACE_EVENTS = ("node_start", "rewrite")


def executor(hub, prompts, *rewriter_replies):
    llm = scripted(*[(RoleTag.REWRITER, reply) for reply in rewriter_replies])
    rewriter = QueryRewriterAgent(llm, prompts)
    return SearchExecutor(hub, rewriter, ExecutionEventLog()), llm


def trace(events):
    return [(e["event"], e["node_id"]) for e in events.events if e["event"] in TRACE_EVENTS]


def replace(child_id, query):
    return json.dumps({"decisions": [{"child_id": child_id, "action": "replace", "query": query}]})


def random_dag(rng, size):
    ids = [f"n{i:03d}" for i in range(1, size + 1)]
    edges = []
    for j in range(1, size):
        parents = rng.sample(ids[:j], rng.randint(1, min(j, 3)))
        edges.extend((p, ids[j]) for p in parents)
    return make_graph(edges, nodes=ids)


class TestExecuteNode:
    def test_info_time_is_latest_publication(self, prompts):
        hub = FakeHub(responses={"q-A": [evidence("old", published_at=NOW.replace(hour=1)),
                                         evidence("new", published_at=NOW.replace(hour=9))]})
        node = make_graph([], nodes=["A"]).nodes["A"]
        done = SearchExecutor(hub).execute_node(node, NOW)
        assert done.status == NodeStatus.EXECUTED
        assert done.info_time == NOW.replace(hour=9)

    def test_undated_results_use_retrieval_time(self):
        hub = FakeHub(responses={"q-A": [evidence("undated")]})
        node = make_graph([], nodes=["A"]).nodes["A"]
        assert SearchExecutor(hub).execute_node(node, NOW).info_time == NOW

    def test_connector_error_becomes_failed_node(self):
        hub = FakeHub(failures={"q-A": FixtureMiss("news|q-a")})
        node = make_graph([], nodes=["A"]).nodes["A"]
        done = SearchExecutor(hub).execute_node(node, NOW)
        assert done.status == NodeStatus.FAILED
        assert done.response == []
        assert done.error.startswith("FixtureMiss")

    def test_anchor_node_skips_connectors(self):
        hub = FakeHub()
        node = make_graph([], nodes=["A"], api=None).nodes["A"]
        done = SearchExecutor(hub).execute_node(node, NOW)
        assert (done.status, done.response, hub.calls) == (NodeStatus.EXECUTED, [], [])

    def test_rejects_finished_node(self):
        node = make_graph([], nodes=["A"]).nodes["A"].evolve(
            status=NodeStatus.EXECUTED, response=[])
        with pytest.raises(ValueError):
            SearchExecutor(FakeHub()).execute_node(node, NOW)


class TestRun:
    """Traversal order, rewriting and failure handling"""

    async def test_chain_trace(self, prompts):
        hub = FakeHub()
        ex, llm = executor(hub, prompts, replace("B", "refined B"), "KEEP")
        graph = await ex.run(make_graph([("A", "B"), ("B", "C")]), NOW)

        assert trace(ex.events) == [
            ("node_start", "A"), ("rewrite", "B"),
            ("node_start", "B"), ("rewrite", "C"),
            ("node_start", "C"),
        ]
        assert [q for _, q in hub.calls] == ["q-A", "refined B", "q-C"]
        assert graph.nodes["B"].query == "refined B"
        assert llm.count(RoleTag.REWRITER) == 2
        assert all(n.status == NodeStatus.EXECUTED for n in graph.nodes.values())

    async def test_rewriter_disabled(self, prompts):
        hub = FakeHub()
        ex, llm = executor(hub, prompts, replace("B", "never used"))
        opts = ExecutionOptions(enable_rewriter=False)
        graph = await ex.run(make_graph([("A", "B"), ("B", "C")]), NOW, opts)
        assert llm.count(RoleTag.REWRITER) == 0
        assert ex.events.of("rewriter_call") == []
        assert graph.nodes["B"].query == "q-B"

    async def test_anchor_root_is_not_rewritten_from(self, prompts):
        graph = make_graph([("A", "B")])
        graph.replace_node(graph.nodes["A"].evolve(api=None))
        hub = FakeHub()
        ex, llm = executor(hub, prompts)
        graph = await ex.run(graph, NOW)
        assert hub.calls == [(graph.nodes["B"].api, "q-B")]
        assert llm.count(RoleTag.REWRITER) == 0

    async def test_diamond_with_two_workers(self, prompts):
        hub = FakeHub(delay=0.05)
        ex, _ = executor(hub, prompts)
        opts = ExecutionOptions(enable_rewriter=False, max_parallel_nodes=2)
        graph = await ex.run(make_graph([("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]),
                             NOW, opts)

        events = ex.events
        start_d = events.index_of("node_start", "D")
        assert events.index_of("node_finish", "B") < start_d
        assert events.index_of("node_finish", "C") < start_d
        # B and C overlap
        assert events.index_of("node_start", "C") < events.index_of("node_finish", "B")
        assert all(n.status == NodeStatus.EXECUTED for n in graph.nodes.values())

    async def test_random_dags_respect_dependencies(self, prompts):
        rng = random.Random(5)
        for _ in range(200):
            graph = random_dag(rng, rng.randint(1, 12))
            edges = graph.edges
            ex, _ = executor(FakeHub(), prompts, *["KEEP"] * len(graph))
            opts = ExecutionOptions(max_parallel_nodes=rng.randint(1, 3))
            graph = await ex.run(graph, NOW, opts)

            assert all(n.is_done for n in graph.nodes.values())
            events = ex.events.events
            assert len(ex.events.of("node_start")) == len(graph)
            assert ex.events.of("rewrite_failed") == []
            for src, dst in edges:
                start = ex.events.index_of("node_start", dst)
                assert ex.events.index_of("node_finish", src) < start
                rewrites = [i for i, e in enumerate(events) if e["event"] == "rewrite"
                            and e["node_id"] == dst and e["detail"]["parent"] == src]
                assert len(rewrites) == 1
                assert rewrites[0] < start

    async def test_failed_node_does_not_block_descendants(self, prompts):
        hub = FakeHub(failures={"q-B": FixtureMiss("news|q-b")})
        ex, _ = executor(hub, prompts)
        opts = ExecutionOptions(enable_rewriter=False)
        graph = await ex.run(make_graph([("A", "B"), ("B", "C")]), NOW, opts)
        assert graph.nodes["B"].status == NodeStatus.FAILED
        assert graph.nodes["C"].status == NodeStatus.EXECUTED
        finish = ex.events.of("node_finish")[1]
        assert finish["detail"]["status"] == "Failed"
        assert ex.events.get_stats()["failed_nodes"] == ["B"]

    async def test_rewrite_only_touches_immediate_children(self, prompts):
        decisions = json.dumps({"decisions": [
            {"child_id": "B", "action": "replace", "query": "new B"},
            {"child_id": "D", "action": "replace", "query": "hijacked"},
        ]})
        hub = FakeHub()
        ex, _ = executor(hub, prompts, decisions, "KEEP")
        graph = await ex.run(make_graph([("A", "B"), ("A", "C"), ("B", "D")]), NOW)
        assert graph.nodes["B"].query == "new B"
        assert graph.nodes["C"].query == "q-C"
        assert graph.nodes["D"].query == "q-D"
        assert graph.nodes["A"].query == "q-A"

    async def test_rewriter_failure_keeps_planned_queries(self, prompts):
        hub = FakeHub()
        ex, _ = executor(hub, prompts)  # empty script
        graph = await ex.run(make_graph([("A", "B"), ("B", "C")]), NOW)
        assert [q for _, q in hub.calls] == ["q-A", "q-B", "q-C"]
        assert [e["node_id"] for e in ex.events.of("rewrite_failed")] == ["A", "B"]
        assert all(n.status == NodeStatus.EXECUTED for n in graph.nodes.values())

    async def test_deterministic(self, prompts):
        outputs = []
        for _ in range(2):
            ex, _ = executor(FakeHub(), prompts, replace("B", "refined B"), "KEEP")
            graph = await ex.run(make_graph([("A", "B"), ("A", "C"), ("B", "D")]), NOW)
            outputs.append((graph.to_json(), trace(ex.events)))
        assert outputs[0] == outputs[1]

    async def test_invalid_graph_rejected(self, prompts):
        ex, _ = executor(FakeHub(), prompts)
        with pytest.raises(PlanInvalid):
            await ex.run(make_graph([("A", "B"), ("X", "B")]), NOW)
        with pytest.raises(PlanInvalid):
            await ex.run(SearchGraph(), NOW)

    async def test_already_executed_graph_rejected(self, prompts):
        graph = make_graph([("A", "B")])
        graph.replace_node(graph.nodes["A"].evolve(status=NodeStatus.EXECUTED, response=[]))
        ex, _ = executor(FakeHub(), prompts)
        with pytest.raises(ValueError):
            await ex.run(graph, NOW)


class TestRewriteParsing:
    """Rewriter reply handling"""

    CHILDREN = {"n002": "ACME news", "n003": "ACME prices"}

    def test_keep(self):
        for text in ("KEEP", "keep.", "```\nKEEP\n```"):
            decisions = parse_rewrite_response(text, self.CHILDREN)
            assert [d.action for d in decisions] == ["keep", "keep"]

    def test_replace_and_noop_replace(self):
        text = json.dumps({"decisions": [
            {"child_id": "n002", "action": "replace", "new_query": " ACME Q3 earnings news "},
            {"child_id": "n003", "action": "replace", "query": "ACME prices"},
            {"child_id": "n999", "action": "replace", "query": "unknown"},
        ]})
        decisions = {d.child_id: d for d in parse_rewrite_response(text, self.CHILDREN)}
        assert decisions["n002"].new_query == "ACME Q3 earnings news"
        assert decisions["n003"].action == "keep"
        assert set(decisions) == {"n002", "n003"}

    def test_empty_replacement_is_keep(self):
        text = json.dumps({"decisions": [{"child_id": "n002", "action": "replace", "query": " "}]})
        assert parse_rewrite_response(text, self.CHILDREN)[0].action == "keep"

    def test_garbage(self):
        with pytest.raises(RewriterParseError):
            parse_rewrite_response("I would refine these queries.", self.CHILDREN)
        with pytest.raises(RewriterParseError):
            parse_rewrite_response("[1, 2]", self.CHILDREN)

    def test_unparsed_reply_keeps_children(self, prompts):
        graph = make_graph([("A", "B")])
        graph.replace_node(graph.nodes["A"].evolve(status=NodeStatus.EXECUTED, response=[]))
        rewriter = QueryRewriterAgent(scripted((RoleTag.REWRITER, "hmm")), prompts)
        graph, decisions = rewriter.rewrite_children(graph, "A")
        assert [d.action for d in decisions] == ["keep"]
        assert graph.nodes["B"].query == "q-B"

    def test_summary(self):
        graph = make_graph([], nodes=["A"])
        failed = graph.nodes["A"].evolve(status=NodeStatus.FAILED, response=[], error="Timeout")
        assert summarize_response(failed) == "FAILED: Timeout"
        long = graph.nodes["A"].evolve(status=NodeStatus.EXECUTED,
                                       response=[evidence("x" * 2000, published_at=NOW)])
        summary = summarize_response(long)
        assert len(summary) == 1500
        assert summary.startswith("- 2024-10-15T12:00:00Z Test Wire: xxx")
        assert summary.endswith("...")
