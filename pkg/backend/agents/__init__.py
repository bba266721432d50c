from .base_agent import BaseAgent
from .planner import PlannerAgent, extract_semantics, draft_plan, parse_plan_json
from .rewriter import QueryRewriterAgent
from .executor import SearchExecutor
from .reporter import ResponseGenerator, aggregate, dedup, build_charts, render_kline, write_report

__all__ = [
    "BaseAgent",
    "PlannerAgent",
    "extract_semantics",
    "draft_plan",
    "parse_plan_json",
    "QueryRewriterAgent",
    "SearchExecutor",
    "ResponseGenerator",
    "aggregate",
    "dedup",
    "build_charts",
    "render_kline",
    "write_report",
]
