import asyncio
import time
from datetime import datetime
from typing import Dict, Optional

from loguru import logger

from backend.agents.rewriter import QueryRewriterAgent
from backend.connectors.hub import ConnectorHub
from backend.errors import LlmError, PlanInvalid
from backend.models import ExecutionOptions, NodeStatus, SearchNode
from backend.storage.search_graph import SearchGraph
from backend.utils.logger import ExecutionEventLog


class SearchExecutor:
    """
    Traverses a search graph, executing ready nodes and rewriting their
    successors.

    A single coordinator coroutine owns the graph. Connector calls run in
    worker threads, at most ``max_parallel_nodes`` at once. After a node
    finishes, its Pending children are rewritten before any of them is
    admitted, so with one worker the execution order is the graph's
    topological order.
    """

    def __init__(self, connectors: ConnectorHub, rewriter: Optional[QueryRewriterAgent] = None,
                 events: Optional[ExecutionEventLog] = None):
        self.connectors = connectors
        self.rewriter = rewriter
        self.events = events or ExecutionEventLog()
        self.name = "Search Executor"

    def execute_node(self, node: SearchNode, now: datetime) -> SearchNode:
        """
        Run one node's sub-query. Never raises: connector failures come back
        as a Failed node with an empty response.

        A node without an api is a structural anchor and completes with an
        empty response and no info time.
        """
        if node.status != NodeStatus.PENDING:
            raise ValueError(f"node {node.id} is {node.status.value}, expected Pending")
        if node.api is None:
            return node.evolve(status=NodeStatus.EXECUTED, response=[])

        start_time = time.time()
        try:
            items, retrieved_at = self.connectors.execute(node.api, node.query, now)
        except Exception as e:
            # Handle errors gracefully
            logger.bind(agent=self.name).warning(
                "node {} failed after {:.2f}s: {}", node.id, time.time() - start_time, e)
            return node.evolve(status=NodeStatus.FAILED, response=[],
                               error=f"{type(e).__name__}: {e}")

        published = [item.published_at for item in items if item.published_at is not None]
        info_time = max(published) if published else retrieved_at
        return node.evolve(status=NodeStatus.EXECUTED, response=items, info_time=info_time)

    def rewrite_children(self, graph: SearchGraph, executed_id: str) -> SearchGraph:
        """Rewriter pass for ``executed_id``, recorded in the event log"""
        children = self.rewriter.pending_children(graph, executed_id)
        if not children:
            return graph
        self.events.record("rewriter_call", executed_id, children=children)
        try:
            graph, decisions = self.rewriter.rewrite_children(graph, executed_id)
        except LlmError as e:
            # children keep their planned queries
            logger.bind(agent=self.name).warning("rewriter failed for {}: {}", executed_id, e)
            self.events.record("rewrite_failed", executed_id, error=str(e))
            return graph
        for decision in decisions:
            self.events.record("rewrite", decision.child_id, parent=executed_id,
                               action=decision.action, query=graph.nodes[decision.child_id].query)
        return graph

    async def run(self, graph: SearchGraph, now: datetime,
                  opts: Optional[ExecutionOptions] = None) -> SearchGraph:
        """
        Execute every node of a valid, all-Pending graph.

        Raises:
            PlanInvalid: the graph breaks an invariant
            ValueError: a node has already been executed
        """
        opts = opts or ExecutionOptions()
        violations = graph.validate()
        if violations:
            raise PlanInvalid(violations)
        started = [n for n, node in graph.nodes.items() if node.status != NodeStatus.PENDING]
        if started:
            raise ValueError(f"nodes already executed: {sorted(started)}")

        rewrite = opts.enable_rewriter and self.rewriter is not None
        running: Dict[asyncio.Task, str] = {}
        while True:
            ready = graph.ready_set(exclude=running.values())
            for node_id in ready[: opts.max_parallel_nodes - len(running)]:
                node = graph.nodes[node_id]
                self.events.record("node_start", node_id, api=node.api.value if node.api else None,
                                   query=node.query)
                task = asyncio.create_task(asyncio.to_thread(self.execute_node, node, now))
                running[task] = node_id
            if not running:
                break

            done, _ = await asyncio.wait(running, return_when=asyncio.FIRST_COMPLETED)
            for task in sorted(done, key=lambda t: running[t]):
                node_id = running.pop(task)
                node = task.result()
                graph.replace_node(node)
                self.events.record("node_finish", node_id, status=node.status.value,
                                   items=len(node.response or []), error=node.error)
                # an anchor carries no evidence, so there is nothing to rewrite from
                if rewrite and node.api is not None:
                    graph = await asyncio.to_thread(self.rewrite_children, graph, node_id)

        logger.bind(agent=self.name).info("graph executed: {}", self.events.get_stats()["event_counts"])
        return graph

    def run_sync(self, graph: SearchGraph, now: datetime,
                 opts: Optional[ExecutionOptions] = None) -> SearchGraph:
        return asyncio.run(self.run(graph, now, opts))
