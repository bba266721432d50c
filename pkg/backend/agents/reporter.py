import json
import os
import re
import string
from datetime import datetime
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Set, Tuple

from loguru import logger

from backend.agents.base_agent import BaseAgent
from backend.errors import GenerationEmpty
from backend.llm.gateway import LlmBackend
from backend.models import (
    ChartSeries, NodeStatus, OhlcBar, Report, RoleTag, SourceEntry, WeightedEvidence,
)
from backend.storage.search_graph import SearchGraph
from backend.utils.dates import to_iso
from backend.utils.prompts import PromptLibrary

NO_EVIDENCE_NARRATIVE = (
    "No timely information was found for this query. None of the planned searches "
    "returned evidence, so no report could be grounded in sources."
)

CITATION = re.compile(r"\[(\d+)\]")
CITATION_LIST = re.compile(r"\[(\d+(?:\s*,\s*\d+)+)\]")
_PUNCTUATION = str.maketrans("", "", string.punctuation)


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def _reindex(items: Iterable[WeightedEvidence]) -> List[WeightedEvidence]:
    return [item.model_copy(update={"citation_index": i})
            for i, item in enumerate(items, start=1)]


def aggregate(graph: SearchGraph) -> List[WeightedEvidence]:
    """
    Flatten the evidence of every executed node.

    Ordered by weight descending, then origin node id, then item position.
    Zero-weight items stay at the tail.
    """
    items: List[WeightedEvidence] = []
    for node_id, node in graph.nodes.items():
        if not node.is_done:
            raise ValueError(f"node {node_id} has not been executed")
        if node.status != NodeStatus.EXECUTED:
            continue
        for index, evidence in enumerate(node.response or []):
            item_weight = evidence.weight if evidence.weight is not None else (node.weight or 0.0)
            items.append(WeightedEvidence(evidence=evidence, weight=item_weight,
                                          origin_node=node_id, item_index=index))
    items.sort(key=lambda item: (-item.weight, item.origin_node, item.item_index))
    return _reindex(items)


def normalize_content(text: str) -> str:
    return " ".join(text.casefold().translate(_PUNCTUATION).split())


def dedup(items: Sequence[WeightedEvidence]) -> List[WeightedEvidence]:
    """
    Collapse items with the same normalized content.

    The highest-weight member of each class takes the position where the
    class was first seen; citation indexes are reassigned from 1.
    """
    best: Dict[str, WeightedEvidence] = {}
    order: List[str] = []
    for item in items:
        key = normalize_content(item.evidence.content)
        if key not in best:
            order.append(key)
            best[key] = item
        elif item.weight > best[key].weight:
            best[key] = item
    return _reindex(best[key] for key in order)


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------

def build_charts(graph: SearchGraph) -> List[ChartSeries]:
    """One series per symbol from Finance evidence, bars merged by time"""
    bars_by_symbol: Dict[str, Dict[datetime, OhlcBar]] = {}
    for node_id in sorted(graph.nodes):
        for evidence in graph.nodes[node_id].response or []:
            if not evidence.symbol or not evidence.bars:
                continue
            merged = bars_by_symbol.setdefault(evidence.symbol, {})
            for bar in evidence.bars:
                merged.setdefault(bar.time, bar)

    charts = []
    for symbol in sorted(bars_by_symbol):
        bars = [bars_by_symbol[symbol][t] for t in sorted(bars_by_symbol[symbol])]
        title = f"{symbol} k-line {bars[0].time.date()} to {bars[-1].time.date()}"
        charts.append(ChartSeries(symbol=symbol, title=title, bars=bars))
    return charts


def kline_document(series: ChartSeries) -> Dict:
    return {
        "symbol": series.symbol,
        "title": series.title,
        "bars": [
            {"t": to_iso(bar.time), "o": bar.open, "h": bar.high, "l": bar.low,
             "c": bar.close, "v": bar.volume}
            for bar in series.bars
        ],
    }


def render_kline(series: ChartSeries, path: Path) -> Path:
    """
    Write the chart-data sidecar for ``series``.

    Raises:
        ValueError: the series has no bars
        OSError: the file cannot be written
    """
    if not series.bars:
        raise ValueError(f"chart {series.symbol} has no bars")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(kline_document(series), indent=2) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Citations
# ---------------------------------------------------------------------------

def enforce_citations(text: str, valid: Set[int]) -> Tuple[str, List[int]]:
    """
    Drop ``[n]`` markers that reference no source.

    Returns the cleaned text and the cited indexes in ascending order.
    """
    stripped: List[int] = []

    def keep_or_strip(match: re.Match) -> str:
        index = int(match.group(1))
        if index in valid:
            return match.group(0)
        stripped.append(index)
        return ""

    # Dropping an inner marker can join its neighbours into a new one.
    cleaned = None
    while cleaned != text:
        cleaned = text
        text = CITATION_LIST.sub(
            lambda m: "".join(f"[{n.strip()}]" for n in m.group(1).split(",")), text)
        text = CITATION.sub(keep_or_strip, text)
        if stripped:
            text = re.sub(r"[ \t]+([.,;:])", r"\1", text)
            text = re.sub(r"[ \t]{2,}", " ", text)
    if stripped:
        logger.bind(agent="Response Generator").warning(
            "stripped citations with no source: {}", sorted(set(stripped)))
    cited = sorted({int(n) for n in CITATION.findall(cleaned)})
    return cleaned.strip(), cited


def citation_markers(text: str) -> Set[int]:
    return {int(n) for n in CITATION.findall(text)}


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def evidence_view(items: Sequence[WeightedEvidence]) -> List[Dict]:
    """Template-facing view of weighted evidence"""
    return [
        {
            "citation_index": item.citation_index,
            "weight": item.weight,
            "published": to_iso(item.evidence.published_at) if item.evidence.published_at else "undated",
            "evidence": item.evidence,
        }
        for item in items
    ]


class ResponseGenerator(BaseAgent):
    """Writes the cited report from aggregated evidence"""

    def __init__(self, llm: LlmBackend, prompts: PromptLibrary, max_output: int = 2048):
        super().__init__(RoleTag.GENERATOR, "Response Generator", llm, prompts, max_output)

    def generate_report(self, query: str, items: Sequence[WeightedEvidence],
                        charts: Sequence[ChartSeries], now: datetime,
                        failed_nodes: Sequence[str] = ()) -> Report:
        """
        Generate the narrative and keep only sources it actually cites.

        Raises:
            GenerationEmpty: blank output twice in a row
        """
        if not items:
            self.log_action("no_evidence", {"query": query[:80]})
            return Report(query=query, narrative=NO_EVIDENCE_NARRATIVE, charts=list(charts),
                          generated_at=now, failed_nodes=list(failed_nodes))

        prompt = self.render(
            "generator",
            query=query,
            now_iso=to_iso(now),
            items=evidence_view(items),
            charts=[series.symbol for series in charts],
        )
        text = self.complete(prompt)
        if not text.strip():
            self.log_action("generation_retry", {"reason": "blank output"})
            text = self.complete(prompt)
        if not text.strip():
            raise GenerationEmpty()

        narrative, cited = enforce_citations(text, {item.citation_index for item in items})
        by_index = {item.citation_index: item for item in items}
        sources = [
            SourceEntry(
                index=index,
                source_name=by_index[index].evidence.source_name,
                source_url=by_index[index].evidence.source_url,
                published_at=by_index[index].evidence.published_at,
            )
            for index in cited if index in by_index
        ]
        self.log_action("report_generated", {"sources": len(sources), "charts": len(charts)})
        return Report(query=query, narrative=narrative, sources=sources, charts=list(charts),
                      generated_at=now, failed_nodes=list(failed_nodes))


def render_markdown(report: Report, failures: Dict[str, str] = None) -> str:
    failures = failures or {}
    lines = ["# Research report", ""]
    lines.append("**Query:** " + " ".join(report.query.split()))
    lines.append("")
    lines.append(f"_Generated {to_iso(report.generated_at)}_")
    lines.append("")
    lines.append(report.narrative.strip())
    lines.append("")

    if report.charts:
        lines += ["## Charts", ""]
        for series in report.charts:
            lines.append(f"- {series.title}: `charts/{series.symbol}.json`")
        lines.append("")

    if report.failed_nodes:
        lines += ["## Coverage", "", "Some searches returned no data; the report may be partial.", ""]
        for node_id in report.failed_nodes:
            reason = failures.get(node_id)
            lines.append(f"- {node_id}" + (f": {reason}" if reason else ""))
        lines.append("")

    lines += ["## Sources", ""]
    if not report.sources:
        lines.append("(none)")
    for source in report.sources:
        entry = f"[{source.index}] {source.source_name}"
        if source.source_url:
            entry += f", {source.source_url}"
        if source.published_at:
            entry += f" ({to_iso(source.published_at)})"
        lines.append(entry)
    return "\n".join(lines) + "\n"


def write_report(report: Report, out_dir: Path, failures: Dict[str, str] = None) -> Path:
    """
    Write ``report.md`` and one ``charts/<symbol>.json`` per chart.

    Returns the report path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for series in report.charts:
        render_kline(series, out_dir / "charts" / f"{series.symbol}.json")
    path = out_dir / "report.md"
    tmp = path.with_suffix(".md.tmp")
    tmp.write_text(render_markdown(report, failures), encoding="utf-8")
    os.replace(tmp, path)
    return path
