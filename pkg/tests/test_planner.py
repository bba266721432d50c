import json
import random
from datetime import date, datetime, timedelta, timezone

import pytest

from backend.agents.planner import (
    PlannerAgent, draft_plan, extract_semantics, parse_plan_json,
)
from backend.errors import (
    FarFutureDate, PlanInvalid, PlanParseError, ScriptExhausted, UnresolvableDateExpr,
)
from backend.models import ApiKind, QueryContext, RoleTag, ViolationKind
from backend.utils.dates import resolve_relative_date, to_iso

from conftest import scripted

NOW = datetime(2024, 10, 15, 12, 0, tzinfo=timezone.utc)  # a Tuesday

FOUR_NODE_PLAN = json.dumps({
    "root": "n001",
    "nodes": [
        {"id": "n001", "query": "ACME outlook", "api": None},
        {"id": "n002", "query": "ACME daily prices 2024-10-01 to 2024-10-14", "api": "Finance"},
        {"id": "n003", "query": "ACME earnings news", "api": "News"},
        {"id": "n004", "query": "semiconductor sector context", "api": "WebSearch"},
    ],
    "edges": [["n001", "n002"], ["n001", "n003"], ["n001", "n004"]],
})

CYCLIC_PLAN = json.dumps({
    "root": "n001",
    "nodes": [
        {"id": "n001", "query": "root", "api": None},
        {"id": "n002", "query": "a", "api": "News"},
        {"id": "n003", "query": "b", "api": "News"},
    ],
    "edges": [["n001", "n002"], ["n002", "n003"], ["n003", "n002"]],
})


class TestResolveRelativeDate:
    """Relative-date grammar"""

    @pytest.mark.parametrize("expr,expected", [
        ("yesterday", date(2024, 10, 14)),
        ("last Friday", date(2024, 10, 11)),
        ("last Tuesday", date(2024, 10, 8)),
        ("2024-09-30", date(2024, 9, 30)),
        ("today", date(2024, 10, 15)),
        ("3 days ago", date(2024, 10, 12)),
        ("this week", date(2024, 10, 14)),
        ("last week", date(2024, 10, 7)),
        ("last month", date(2024, 9, 1)),
        ("this quarter", date(2024, 10, 1)),
    ])
    def test_examples(self, expr, expected):
        assert resolve_relative_date(expr, NOW) == expected

    def test_unsupported_expression(self):
        with pytest.raises(UnresolvableDateExpr):
            resolve_relative_date("the day after the election", NOW)

    @pytest.mark.parametrize("expr", ["999999 days ago", "9999999999 days ago"])
    def test_days_ago_before_calendar_start(self, expr):
        with pytest.raises(UnresolvableDateExpr):
            resolve_relative_date(expr, NOW)

    def test_never_resolves_into_the_future(self):
        rng = random.Random(11)
        forms = ["today", "yesterday", "5 days ago", "last monday", "last sunday",
                 "this week", "last week", "last month", "this quarter"]
        for _ in range(500):
            now = datetime(2020, 1, 1, tzinfo=timezone.utc) + timedelta(
                minutes=rng.randint(0, 5 * 365 * 24 * 60))
            for expr in forms:
                assert resolve_relative_date(expr, now) <= now.date()


class TestExtractSemantics:
    """Temporal indicators found in the user query"""

    def test_last_friday(self):
        ctx = extract_semantics(QueryContext(
            user_query="How did NVDA move after last Friday's CPI print?", now=NOW))
        assert [(d.surface_form, d.resolved) for d in ctx.resolved_dates] == [
            ("last Friday", date(2024, 10, 11))]

    def test_no_temporal_expression(self):
        ctx = extract_semantics(QueryContext(user_query="What drives gold prices?", now=NOW))
        assert ctx.resolved_dates == []

    def test_absolute_date(self):
        ctx = extract_semantics(QueryContext(user_query="What happened on 2024-06-03?", now=NOW))
        assert [(d.surface_form, d.resolved) for d in ctx.resolved_dates] == [
            ("2024-06-03", date(2024, 6, 3))]

    def test_out_of_calendar_expression_left_in_query(self):
        ctx = extract_semantics(QueryContext(user_query="What happened 999999 days ago?", now=NOW))
        assert ctx.resolved_dates == []

    def test_far_future_rejected(self):
        with pytest.raises(FarFutureDate):
            extract_semantics(QueryContext(user_query="Rates on 2025-03-01?", now=NOW))


class TestParsePlanJson:
    """Plan document parsing"""

    def test_minimal_plan(self):
        graph = parse_plan_json('{"root":"n001","nodes":[{"id":"n001","query":"q","api":"News"}],"edges":[]}')
        assert len(graph) == 1
        assert graph.nodes["n001"].api == ApiKind.NEWS

    def test_unknown_api(self):
        text = '{"root":"n001","nodes":[{"id":"n001","query":"q","api":"Weather"}],"edges":[]}'
        with pytest.raises(PlanParseError) as exc:
            parse_plan_json(text)
        assert exc.value.path == "$.nodes[0].api"
        assert "Weather" in str(exc.value)

    def test_duplicate_node_id(self):
        text = json.dumps({"root": "n001", "nodes": [
            {"id": "n001", "query": "a", "api": "News"},
            {"id": "n001", "query": "b", "api": "News"}], "edges": []})
        with pytest.raises(PlanParseError) as exc:
            parse_plan_json(text)
        assert exc.value.path == "$.nodes[1].id"

    def test_code_fence_and_unknown_fields(self):
        text = "```json\n" + json.dumps({
            "root": "n001", "comment": "ignored",
            "nodes": [{"id": "n001", "query": "q", "api": "news", "why": "ignored"}],
            "edges": []}) + "\n```"
        assert parse_plan_json(text).nodes["n001"].api == ApiKind.NEWS

    def test_cycle_is_a_violation(self):
        draft = draft_plan(CYCLIC_PLAN)
        assert draft.parsed is None
        assert [v.kind for v in draft.violations] == [ViolationKind.CYCLE_DETECTED]
        with pytest.raises(PlanInvalid):
            parse_plan_json(CYCLIC_PLAN)

    def test_too_many_nodes(self):
        nodes = [{"id": f"n{i:03d}", "query": f"q{i}", "api": "News"} for i in range(1, 14)]
        edges = [["n001", f"n{i:03d}"] for i in range(2, 14)]
        draft = draft_plan(json.dumps({"root": "n001", "nodes": nodes, "edges": edges}))
        assert ViolationKind.TOO_MANY_NODES in {v.kind for v in draft.violations}

    def test_prefilled_execution_fields(self):
        text = json.dumps({"root": "n001", "nodes": [
            {"id": "n001", "query": "q", "api": "News", "weight": 3.0}], "edges": []})
        draft = draft_plan(text)
        assert [v.kind for v in draft.violations] == [ViolationKind.PREFILLED_FIELD]

    def test_non_root_needs_api_and_query(self):
        text = json.dumps({"root": "n001", "nodes": [
            {"id": "n001", "query": "", "api": None},
            {"id": "n002", "query": " ", "api": None}], "edges": [["n001", "n002"]]})
        kinds = {v.kind for v in draft_plan(text).violations}
        assert kinds == {ViolationKind.MISSING_API, ViolationKind.EMPTY_QUERY}

    def test_malformed_plans_never_yield_invalid_graphs(self):
        rng = random.Random(3)
        base = json.loads(FOUR_NODE_PLAN)
        for _ in range(200):
            doc = json.loads(json.dumps(base))
            mutation = rng.choice(["edge", "drop_edge", "api", "root", "dup", "self"])
            if mutation == "edge":
                doc["edges"].append([rng.choice(["n002", "n003", "n004"]), "n001"])
            elif mutation == "drop_edge":
                doc["edges"].pop(rng.randrange(len(doc["edges"])))
            elif mutation == "api":
                doc["nodes"][rng.randrange(1, 4)]["api"] = rng.choice([None, "Bogus", "News"])
            elif mutation == "root":
                doc["root"] = rng.choice(["n001", "n003", "n999"])
            elif mutation == "dup":
                doc["nodes"].append(dict(doc["nodes"][1]))
            else:
                node_id = rng.choice(["n002", "n003"])
                doc["edges"].append([node_id, node_id])
            try:
                graph = parse_plan_json(json.dumps(doc))
            except (PlanParseError, PlanInvalid):
                continue
            assert graph.validate() == []


class TestBuildPlan:
    """PlannerAgent.build_plan against the scripted backend"""

    def ctx(self, query="How is ACME doing?"):
        return extract_semantics(QueryContext(user_query=query, now=NOW))

    def test_four_node_plan(self, prompts):
        llm = scripted((RoleTag.PLANNER, FOUR_NODE_PLAN))
        graph = PlannerAgent(llm, prompts).build_plan(self.ctx())
        assert len(graph) == 4
        assert len(graph.edges) == 3
        assert graph.nodes["n001"].query == "How is ACME doing?"
        assert graph.validate() == []
        assert llm.count(RoleTag.PLANNER) == 1

    def test_repair_round_trip(self, prompts):
        llm = scripted((RoleTag.PLANNER, "Sure! Here is the plan."),
                       (RoleTag.PLANNER, FOUR_NODE_PLAN))
        graph = PlannerAgent(llm, prompts).build_plan(self.ctx())
        assert len(graph) == 4
        assert llm.count(RoleTag.PLANNER) == 2

    def test_not_json_twice(self, prompts):
        llm = scripted((RoleTag.PLANNER, "not json"), (RoleTag.PLANNER, "not json"),
                       (RoleTag.PLANNER, FOUR_NODE_PLAN))
        with pytest.raises(PlanParseError):
            PlannerAgent(llm, prompts).build_plan(self.ctx())
        assert llm.count(RoleTag.PLANNER) == 2

    def test_cycle_plan_is_invalid(self, prompts):
        llm = scripted((RoleTag.PLANNER, CYCLIC_PLAN))
        with pytest.raises(PlanInvalid) as exc:
            PlannerAgent(llm, prompts).build_plan(self.ctx())
        assert "CycleDetected" in str(exc.value)

    def test_prompt_carries_resolved_dates(self, prompts):
        agent = PlannerAgent(scripted(), prompts)
        prompt = agent.planning_prompt(self.ctx("What did the Fed do yesterday?"))
        assert "yesterday -> 2024-10-14" in prompt
        assert to_iso(NOW) in prompt
        assert "Finance" in prompt

    def test_exhausted_script_propagates(self, prompts):
        with pytest.raises(ScriptExhausted):
            PlannerAgent(scripted(), prompts).build_plan(self.ctx())
