import json
from typing import Dict, List, Tuple

from pydantic import ValidationError

from backend.agents.base_agent import BaseAgent
from backend.agents.planner import strip_code_fence
from backend.errors import RewriterParseError
from backend.llm.gateway import LlmBackend
from backend.models import NodeStatus, RewriteDecision, RoleTag, SearchNode
from backend.storage.search_graph import SearchGraph
from backend.utils.dates import to_iso
from backend.utils.prompts import PromptLibrary

RESPONSE_SUMMARY_LIMIT = 1500


def summarize_response(node: SearchNode, limit: int = RESPONSE_SUMMARY_LIMIT) -> str:
    """What the rewriter sees of an executed node, truncated to ``limit`` characters"""
    if node.status == NodeStatus.FAILED:
        summary = f"FAILED: {node.error or 'unknown error'}"
    elif not node.response:
        summary = "(no results)"
    else:
        lines = []
        for item in node.response:
            published = to_iso(item.published_at) if item.published_at else "undated"
            lines.append(f"- {published} {item.source_name}: {item.content}")
        summary = "\n".join(lines)
    if len(summary) > limit:
        summary = summary[: limit - 3] + "..."
    return summary


def parse_rewrite_response(text: str, children: Dict[str, str]) -> List[RewriteDecision]:
    """
    Map rewriter output onto one decision per child.

    ``children`` maps child id to its current query. "KEEP" keeps all;
    otherwise a {"decisions": [...]} document. Children the document does not
    mention, unknown ids and replacements equal to the current query all
    become keep.

    Raises:
        RewriterParseError: neither KEEP nor a decisions document
    """
    body = strip_code_fence(text)
    decisions = {child_id: RewriteDecision(child_id=child_id) for child_id in children}
    if body.strip().strip(".").upper() == "KEEP":
        return list(decisions.values())

    try:
        doc = json.loads(body)
    except json.JSONDecodeError as e:
        raise RewriterParseError(f"rewriter reply is not KEEP or JSON: {e.msg}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("decisions"), list):
        raise RewriterParseError("rewriter JSON lacks a decisions list")

    for raw in doc["decisions"]:
        if not isinstance(raw, dict) or raw.get("child_id") not in children:
            continue
        child_id = raw["child_id"]
        action = str(raw.get("action", "keep")).lower()
        new_query = raw.get("query", raw.get("new_query"))
        if action != "replace":
            continue
        try:
            decision = RewriteDecision(child_id=child_id, action="replace", new_query=new_query)
        except ValidationError:
            continue
        if decision.new_query.strip() == children[child_id].strip():
            continue
        decisions[child_id] = decision.model_copy(update={"new_query": decision.new_query.strip()})
    return list(decisions.values())


class QueryRewriterAgent(BaseAgent):
    """Refines the pending successors of a just-executed node"""

    def __init__(self, llm: LlmBackend, prompts: PromptLibrary, max_output: int = 1024):
        super().__init__(RoleTag.REWRITER, "Query Rewriter", llm, prompts, max_output)

    def pending_children(self, graph: SearchGraph, executed_id: str) -> List[str]:
        return [child for child in graph.successors(executed_id)
                if graph.nodes[child].status == NodeStatus.PENDING]

    def rewrite_children(self, graph: SearchGraph,
                         executed_id: str) -> Tuple[SearchGraph, List[RewriteDecision]]:
        """
        One rewriter call for the immediate Pending successors of ``executed_id``.

        Only child queries change. No Pending children means no LLM call.
        An unparseable reply keeps every child.
        """
        executed = graph.nodes[executed_id]
        if not executed.is_done:
            raise ValueError(f"node {executed_id} has not been executed")
        child_ids = self.pending_children(graph, executed_id)
        if not child_ids:
            return graph, []

        children = {child_id: graph.nodes[child_id].query for child_id in child_ids}
        prompt = self.render(
            "rewriter",
            executed_id=executed_id,
            executed_status=executed.status.value,
            executed_query=executed.query,
            response_summary=summarize_response(executed),
            children=[{"id": c, "api": graph.nodes[c].api.value if graph.nodes[c].api else "-",
                       "query": children[c]} for c in child_ids],
            graph_json=graph.to_json(),
        )
        text = self.complete(prompt)
        try:
            decisions = parse_rewrite_response(text, children)
        except RewriterParseError as e:
            self.log_action("rewrite_unparsed", {"parent": executed_id, "error": str(e)})
            decisions = [RewriteDecision(child_id=c) for c in child_ids]

        for decision in decisions:
            if decision.action == "replace":
                child = graph.nodes[decision.child_id]
                graph.replace_node(child.evolve(query=decision.new_query))
                self.log_action("rewrite", {"child": decision.child_id, "query": decision.new_query})
        return graph, decisions
