"""Service wiring and the plan -> execute -> weight -> report pipeline."""
import asyncio
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import requests
from loguru import logger

from backend.agents.executor import SearchExecutor
from backend.agents.planner import PlannerAgent, extract_semantics
from backend.agents.reporter import ResponseGenerator, aggregate, build_charts, dedup
from backend.agents.rewriter import QueryRewriterAgent
from backend.config import EngineConfig, LiveBackendConfig
from backend.connectors.hub import ConnectorHub
from backend.llm.gateway import (
    GroqBackend, LlmBackend, RecordingBackend, RoleRoutedBackend, ScriptedBackend, load_script,
)
from backend.models import (
    ExecutionOptions, FixturesMode, NodeStatus, QueryContext, Report, RoleTag, WeightedEvidence,
)
from backend.storage.fixture_store import FixtureStore
from backend.storage.search_graph import SearchGraph
from backend.utils.logger import ExecutionEventLog
from backend.utils.prompts import PromptLibrary
from backend.utils.temporal import annotate_weights, reference_time

RECORDED_SCRIPT_NAME = "llm_script.recorded.json"


def _groq(backend: LiveBackendConfig) -> GroqBackend:
    return GroqBackend(backend.model_name, backend.api_key_env, backend.endpoint_url,
                       timeout=backend.timeout_seconds)


def build_llm(config: EngineConfig) -> LlmBackend:
    """Scripted backend, or Groq (per-role overrides, recorded in record mode)"""
    if config.llm.mode == "scripted":
        return ScriptedBackend(load_script(config.llm.script_path))

    llm: LlmBackend = _groq(config.llm.live)
    if config.llm.roles:
        llm = RoleRoutedBackend(llm, {role: _groq(b) for role, b in config.llm.roles.items()})
    if config.fixtures.mode == FixturesMode.RECORD:
        llm = RecordingBackend(llm)
    return llm


class Services:
    """Everything a pipeline run talks to: LLM, connectors, prompts, event log"""

    def __init__(self, config: EngineConfig, llm: LlmBackend, connectors: ConnectorHub,
                 prompts: PromptLibrary, events: Optional[ExecutionEventLog] = None):
        self.config = config
        self.llm = llm
        self.connectors = connectors
        self.prompts = prompts
        self.events = events or ExecutionEventLog()

    @property
    def scripted(self) -> bool:
        return isinstance(self.llm, ScriptedBackend)

    def max_output(self, role: RoleTag) -> int:
        return self.config.llm.max_output.get(role, 1024)

    def save_recorded_script(self) -> Optional[Path]:
        """In record mode, write captured LLM replies next to the fixtures"""
        if not isinstance(self.llm, RecordingBackend):
            return None
        path = self.llm.write_script(self.config.fixtures.directory / RECORDED_SCRIPT_NAME)
        logger.info("recorded {} LLM replies to {}", len(self.llm.captured), path)
        return path


def build_services(config: EngineConfig, session: Optional[requests.Session] = None) -> Services:
    store = FixtureStore(config.fixtures.directory, config.fixtures.mode)
    return Services(
        config=config,
        llm=build_llm(config),
        connectors=ConnectorHub.from_config(config.connectors, store, session),
        prompts=PromptLibrary(config.prompts_dir),
    )


class PipelineResult:
    """Outcome of one ``ask``: context, executed graph, evidence and report"""

    def __init__(self, context: QueryContext, graph: SearchGraph,
                 items: List[WeightedEvidence], report: Report, elapsed_seconds: float):
        self.context = context
        self.graph = graph
        self.items = items
        self.report = report
        self.elapsed_seconds = elapsed_seconds

    @property
    def failures(self) -> Dict[str, str]:
        return {node_id: node.error or "" for node_id, node in sorted(self.graph.nodes.items())
                if node.status == NodeStatus.FAILED}


class SearchPipeline:
    """Pre-planner, executor with rewriter, temporal weighting and report generation"""

    def __init__(self, services: Services):
        self.services = services
        llm, prompts = services.llm, services.prompts
        self.planner = PlannerAgent(llm, prompts, services.max_output(RoleTag.PLANNER))
        self.rewriter = QueryRewriterAgent(llm, prompts, services.max_output(RoleTag.REWRITER))
        self.generator = ResponseGenerator(llm, prompts, services.max_output(RoleTag.GENERATOR))
        self.executor = SearchExecutor(services.connectors, self.rewriter, services.events)

    def prepare(self, query: str, now: datetime) -> QueryContext:
        return extract_semantics(QueryContext(user_query=query, now=now))

    def plan(self, ctx: QueryContext) -> SearchGraph:
        return self.planner.build_plan(ctx)

    async def search(self, ctx: QueryContext, opts: ExecutionOptions) -> SearchGraph:
        """Plan, execute and weight; returns the annotated graph"""
        graph = await asyncio.to_thread(self.plan, ctx)
        graph = await self.executor.run(graph, ctx.now, opts)
        temporal = self.services.config.temporal
        t_query = reference_time(ctx, temporal.anchor_to_query_dates)
        return annotate_weights(graph, t_query, temporal.params(),
                                enabled=opts.enable_temporal_weighting)

    def evidence(self, graph: SearchGraph) -> List[WeightedEvidence]:
        return dedup(aggregate(graph))

    async def ask(self, query: str, now: datetime,
                  opts: Optional[ExecutionOptions] = None) -> PipelineResult:
        """
        Run the whole pipeline for one query.

        Raises:
            PlanParseError, PlanInvalid, FarFutureDate: planning failed
            GenerationEmpty: the generator produced nothing
        """
        opts = opts or self.services.config.execution
        start_time = time.time()

        ctx = self.prepare(query, now)
        graph = await self.search(ctx, opts)
        items = self.evidence(graph)
        failed = [n for n, node in sorted(graph.nodes.items()) if node.status == NodeStatus.FAILED]
        report = await asyncio.to_thread(self.generator.generate_report, query, items,
                                         build_charts(graph), ctx.now, failed)

        elapsed = time.time() - start_time
        logger.info("answered in {:.2f}s: {} nodes, {} evidence items, {} failed",
                    elapsed, len(graph), len(items), len(failed))
        return PipelineResult(ctx, graph, items, report, elapsed)
