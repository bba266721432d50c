import json
import re
from datetime import timedelta
from typing import Any, Dict, List, Optional

from backend.agents.base_agent import BaseAgent
from backend.errors import (
    CycleDetected, FarFutureDate, PlanInvalid, PlanParseError, SelfLoop, UnresolvableDateExpr,
)
from backend.llm.gateway import LlmBackend
from backend.models import (
    ApiKind, PlanDraft, QueryContext, ResolvedDate, RoleTag, SearchNode, Violation, ViolationKind,
)
from backend.storage.search_graph import SearchGraph
from backend.utils.dates import RELATIVE_SURFACE_FORMS, resolve_relative_date, to_iso
from backend.utils.prompts import PromptLibrary

MAX_PLAN_NODES = 12
FUTURE_HORIZON = timedelta(days=7)

# Fields the executor owns; a plan must leave them out.
EXECUTION_FIELDS = ("weight", "info_time", "response", "status")

API_CATALOG = "\n".join([
    "- News: dated news articles from the last week (headlines and descriptions)",
    "- WebSearch: general web search results for background and context",
    "- Finance: daily or intraday OHLC price history for one ticker symbol",
])

_FENCE = re.compile(r"^\s*```(?:json)?\s*(.*?)\s*```\s*$", re.DOTALL)


def strip_code_fence(text: str) -> str:
    match = _FENCE.match(text)
    return match.group(1) if match else text.strip()


def extract_semantics(ctx: QueryContext) -> QueryContext:
    """
    Resolve the temporal expressions in the user query against ``ctx.now``.

    Dates are listed in the order they appear; the surface form keeps the
    user's spelling. Forms outside the grammar are left in the query text.

    Raises:
        FarFutureDate: a date resolves more than 7 days after now
    """
    today = ctx.now.date()
    resolved: List[ResolvedDate] = []
    seen = set()
    for match in RELATIVE_SURFACE_FORMS.finditer(ctx.user_query):
        surface = match.group(0)
        if surface.lower() in seen:
            continue
        try:
            day = resolve_relative_date(surface, ctx.now)
        except (UnresolvableDateExpr, ValueError):
            continue
        if day > today + FUTURE_HORIZON:
            raise FarFutureDate(surface, day)
        seen.add(surface.lower())
        resolved.append(ResolvedDate(surface_form=surface, resolved=day))
    return ctx.model_copy(update={"resolved_dates": resolved})


def _require(condition: bool, message: str, path: str):
    if not condition:
        raise PlanParseError(message, path)


def _parse_api(value: Any, path: str) -> Optional[ApiKind]:
    if value is None:
        return None
    _require(isinstance(value, str), "api must be a string or null", path)
    for kind in ApiKind:
        if kind.value.lower() == value.strip().lower():
            return kind
    raise PlanParseError(f"unknown ApiKind {value!r}", path)


def draft_plan(text: str) -> PlanDraft:
    """
    Parse planner output into a graph, collecting invariant violations.

    Structural problems (not JSON, missing fields, unknown ApiKind,
    duplicate ids, dangling edges) raise; graph-level problems (cycles,
    self-loops, roots, size) are returned as violations.

    Raises:
        PlanParseError: with the first offending path
    """
    try:
        doc = json.loads(strip_code_fence(text))
    except json.JSONDecodeError as e:
        raise PlanParseError(f"not valid JSON: {e.msg} at line {e.lineno} column {e.colno}")
    _require(isinstance(doc, dict), "plan must be a JSON object", "$")

    root = doc.get("root")
    _require(isinstance(root, str) and bool(root), "missing root id", "$.root")
    nodes = doc.get("nodes")
    _require(isinstance(nodes, list) and bool(nodes), "nodes must be a non-empty list", "$.nodes")
    edges = doc.get("edges", [])
    _require(isinstance(edges, list), "edges must be a list", "$.edges")

    violations: List[Violation] = []
    graph = SearchGraph(root=root)
    for i, raw in enumerate(nodes):
        path = f"$.nodes[{i}]"
        _require(isinstance(raw, dict), "node must be an object", path)
        node_id = raw.get("id")
        _require(isinstance(node_id, str) and bool(node_id), "missing node id", f"{path}.id")
        _require(node_id not in graph, f"duplicate node id {node_id!r}", f"{path}.id")
        query = raw.get("query", "")
        _require(isinstance(query, str), "query must be a string", f"{path}.query")
        api = _parse_api(raw.get("api"), f"{path}.api")

        prefilled = [name for name in EXECUTION_FIELDS if raw.get(name) is not None]
        if prefilled:
            violations.append(Violation(kind=ViolationKind.PREFILLED_FIELD, node_ids=[node_id],
                                        detail=", ".join(prefilled)))
        if api is None and node_id != root:
            violations.append(Violation(kind=ViolationKind.MISSING_API, node_ids=[node_id]))
        if not query.strip() and node_id != root:
            violations.append(Violation(kind=ViolationKind.EMPTY_QUERY, node_ids=[node_id]))
        graph.add_node(SearchNode(id=node_id, query=query, api=api))

    _require(root in graph, f"root {root!r} does not name a node", "$.root")
    if len(graph) > MAX_PLAN_NODES:
        violations.append(Violation(kind=ViolationKind.TOO_MANY_NODES,
                                    detail=f"{len(graph)} > {MAX_PLAN_NODES}"))

    for j, edge in enumerate(edges):
        path = f"$.edges[{j}]"
        _require(isinstance(edge, list) and len(edge) == 2
                 and all(isinstance(end, str) for end in edge), "edge must be [src, dst]", path)
        src, dst = edge
        _require(src in graph, f"unknown node {src!r}", f"{path}[0]")
        _require(dst in graph, f"unknown node {dst!r}", f"{path}[1]")
        try:
            graph.add_edge(src, dst)
        except SelfLoop:
            violations.append(Violation(kind=ViolationKind.SELF_LOOP, node_ids=[src]))
        except CycleDetected:
            violations.append(Violation(kind=ViolationKind.CYCLE_DETECTED, node_ids=[src, dst]))

    violations.extend(graph.validate())
    return PlanDraft(raw_llm_text=text, parsed=None if violations else graph,
                     violations=violations)


def parse_plan_json(text: str) -> SearchGraph:
    """
    Parse plan JSON into a valid SearchGraph.

    Raises:
        PlanParseError: malformed document
        PlanInvalid: well-formed but breaks a graph invariant
    """
    draft = draft_plan(text)
    if draft.violations:
        raise PlanInvalid(draft.violations)
    return draft.parsed


class PlannerAgent(BaseAgent):
    """Pre-planner: turns the user query into a search graph with one LLM call"""

    def __init__(self, llm: LlmBackend, prompts: PromptLibrary, max_output: int = 1024):
        super().__init__(RoleTag.PLANNER, "Planner Agent", llm, prompts, max_output)

    def planning_prompt(self, ctx: QueryContext) -> str:
        if ctx.resolved_dates:
            dates_block = "\n".join(f"- {item.surface_form} -> {item.resolved.isoformat()}"
                                    for item in ctx.resolved_dates)
        else:
            dates_block = "(none)"
        return self.render(
            "planner",
            user_query=ctx.user_query,
            now_iso=to_iso(ctx.now),
            resolved_dates_block=dates_block,
            api_catalog=API_CATALOG,
        )

    def build_plan(self, ctx: QueryContext) -> SearchGraph:
        """
        Ask the LLM for a plan, repairing once if it cannot be parsed.

        Raises:
            PlanParseError: still unparseable after the repair round trip
            PlanInvalid: parsed plan breaks graph invariants
        """
        text = self.complete(self.planning_prompt(ctx))
        try:
            draft = draft_plan(text)
        except PlanParseError as e:
            self.log_action("plan_repair", {"error": str(e)})
            text = self.complete(self.render("plan_repair", error=str(e), previous=text))
            draft = draft_plan(text)

        if draft.violations:
            self.log_action("plan_invalid", {"violations": [str(v) for v in draft.violations]})
            raise PlanInvalid(draft.violations)

        graph = draft.parsed
        root = graph.nodes[graph.root]
        graph.replace_node(root.evolve(query=ctx.user_query))
        self.log_action("plan_built", {"apis": plan_summary(graph), "edges": len(graph.edges)})
        return graph

    def plan(self, ctx: QueryContext) -> SearchGraph:
        return self.build_plan(extract_semantics(ctx))


def plan_summary(graph: SearchGraph) -> Dict[str, Any]:
    """Counts per ApiKind, for logging"""
    counts: Dict[str, Any] = {}
    for node in graph.nodes.values():
        key = node.api.value if node.api else "anchor"
        counts[key] = counts.get(key, 0) + 1
    return counts
