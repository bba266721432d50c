"""Time-decay weighting of executed search graphs.

weight = numerator / max(|dt|, min_delta) inside the window, 0 outside it,
with |dt| measured in hours. Defaults: 24 / max(|dt|, 1) within 72 hours.
"""
from datetime import datetime, timedelta
from typing import Optional

from backend.models import NodeStatus, QueryContext, TemporalParams
from backend.storage.search_graph import SearchGraph
from backend.utils.dates import ensure_utc, start_of_day

DEFAULT_PARAMS = TemporalParams()


def weight(t_query: datetime, t_info: datetime, params: TemporalParams = DEFAULT_PARAMS) -> float:
    delta_hours = abs((ensure_utc(t_query) - ensure_utc(t_info)).total_seconds()) / 3600.0
    if delta_hours >= params.window_hours:
        return 0.0
    return params.numerator_hours / max(delta_hours, params.min_delta_hours)


def reference_time(ctx: QueryContext, anchor_to_query_dates: bool = True) -> datetime:
    """
    Timestamp the evidence is compared against.

    ``now`` by default; when the query names dates, the end of the latest
    named day, never later than ``now``.
    """
    if not anchor_to_query_dates or not ctx.resolved_dates:
        return ctx.now
    latest = max(item.resolved for item in ctx.resolved_dates)
    return min(ctx.now, start_of_day(latest) + timedelta(days=1))


def annotate_weights(graph: SearchGraph, t_query: datetime,
                     params: TemporalParams = DEFAULT_PARAMS,
                     enabled: bool = True) -> SearchGraph:
    """
    Set every node's weight and every evidence item's weight.

    Failed nodes and nodes without an info time get 0. Items with their own
    published_at are weighted by the same formula, other items inherit the
    node weight. With ``enabled`` off every weight is 1 (ablation baseline).
    """
    for node_id in sorted(graph.nodes):
        node = graph.nodes[node_id]
        if not node.is_done:
            raise ValueError(f"node {node_id} has not been executed")

        if not enabled:
            node_weight = 1.0
        elif node.status == NodeStatus.FAILED or node.info_time is None:
            node_weight = 0.0
        else:
            node_weight = weight(t_query, node.info_time, params)

        items = None
        if node.response is not None:
            items = [
                item.model_copy(update={"weight": _item_weight(item.published_at, node_weight,
                                                               t_query, params, enabled)})
                for item in node.response
            ]
        graph.replace_node(node.evolve(weight=node_weight, response=items))
    return graph


def _item_weight(published_at: Optional[datetime], node_weight: float, t_query: datetime,
                 params: TemporalParams, enabled: bool) -> float:
    if not enabled:
        return 1.0
    if published_at is None:
        return node_weight
    return weight(t_query, published_at, params)


