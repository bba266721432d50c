import json
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import networkx as nx

from backend.errors import CycleDetected, DuplicateNodeId, SelfLoop, UnknownNode
from backend.models import (
    ApiKind, Evidence, NodeStatus, SearchNode, Violation, ViolationKind,
)
from backend.utils.dates import parse_iso, to_iso


class SearchGraph:
    """
    DAG of sub-query nodes.

    Node payloads live in ``nodes``; the edge relation is kept in a networkx
    DiGraph. Every mutation is checked so the edge relation stays acyclic.
    The first node added becomes the root unless ``root`` is given.
    """

    def __init__(self, root: Optional[str] = None):
        self.root = root
        self.nodes: Dict[str, SearchNode] = {}
        self._dag = nx.DiGraph()

    # ------------------------------------------------------------------
    # Mutation
    # ------------------------------------------------------------------
    def add_node(self, node: SearchNode) -> "SearchGraph":
        if node.id in self.nodes:
            raise DuplicateNodeId(node.id)
        self.nodes[node.id] = node
        self._dag.add_node(node.id)
        if self.root is None:
            self.root = node.id
        return self

    def add_edge(self, src: str, dst: str) -> "SearchGraph":
        """
        Add a dependency ``src -> dst``.

        Repeated edges are a no-op. A rejected edge leaves the graph untouched.

        Raises:
            UnknownNode, SelfLoop, CycleDetected
        """
        for node_id in (src, dst):
            if node_id not in self.nodes:
                raise UnknownNode(node_id)
        if src == dst:
            raise SelfLoop(src)
        if self._dag.has_edge(src, dst):
            return self
        if nx.has_path(self._dag, dst, src):
            raise CycleDetected(src, dst)
        self._dag.add_edge(src, dst)
        return self

    def replace_node(self, node: SearchNode) -> "SearchGraph":
        """Swap in an updated payload for an existing node id"""
        if node.id not in self.nodes:
            raise UnknownNode(node.id)
        self.nodes[node.id] = node
        return self

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------
    @property
    def edges(self) -> Set[Tuple[str, str]]:
        return set(self._dag.edges())

    def predecessors(self, node_id: str) -> List[str]:
        return sorted(self._dag.predecessors(node_id))

    def successors(self, node_id: str) -> List[str]:
        return sorted(self._dag.successors(node_id))

    def validate(self) -> List[Violation]:
        """Return every broken invariant; an empty list means the graph is valid"""
        violations: List[Violation] = []
        if self.root is None or self.root not in self.nodes:
            return [Violation(kind=ViolationKind.NO_ROOT)]

        if not nx.is_directed_acyclic_graph(self._dag):
            violations.append(Violation(kind=ViolationKind.CYCLE_DETECTED))

        if self._dag.in_degree(self.root) > 0:
            violations.append(Violation(
                kind=ViolationKind.ROOT_HAS_PARENT, node_ids=[self.root],
            ))

        parentless = sorted(
            n for n in self._dag.nodes if n != self.root and self._dag.in_degree(n) == 0
        )
        extra_roots = [n for n in parentless if self._dag.out_degree(n) > 0]
        isolated = [n for n in parentless if self._dag.out_degree(n) == 0]
        if extra_roots:
            violations.append(Violation(
                kind=ViolationKind.MULTIPLE_ROOTS, node_ids=[self.root] + extra_roots,
            ))

        # Nodes hanging off an extra root are covered by MultipleRoots.
        reachable = nx.descendants(self._dag, self.root) | {self.root}
        for node_id in sorted(self.nodes):
            if node_id in isolated or (
                node_id not in reachable and node_id not in parentless
                and not any(nx.has_path(self._dag, r, node_id) for r in extra_roots)
            ):
                violations.append(Violation(
                    kind=ViolationKind.UNREACHABLE_NODE, node_ids=[node_id],
                ))
        return violations

    def ready_set(self, exclude: Iterable[str] = ()) -> List[str]:
        """
        Pending nodes whose predecessors have all finished, ascending by id.

        Failed predecessors count as finished: their descendants still run.
        """
        skip = set(exclude)
        ready = []
        for node_id, node in self.nodes.items():
            if node.status != NodeStatus.PENDING or node_id in skip:
                continue
            if all(self.nodes[p].is_done for p in self._dag.predecessors(node_id)):
                ready.append(node_id)
        return sorted(ready)

    def topological_order(self) -> List[str]:
        """Unique topological order, ties broken by ascending node id"""
        return list(nx.lexicographical_topological_sort(self._dag))

    def copy(self) -> "SearchGraph":
        clone = SearchGraph(root=self.root)
        clone.nodes = dict(self.nodes)
        clone._dag = self._dag.copy()
        return clone

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self.nodes

    def __repr__(self):
        return f"<SearchGraph root={self.root} nodes={len(self.nodes)} edges={self._dag.number_of_edges()}>"

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------
    def to_dict(self) -> Dict[str, Any]:
        nodes = []
        for node_id in sorted(self.nodes):
            node = self.nodes[node_id]
            entry: Dict[str, Any] = {
                "id": node.id,
                "query": node.query,
                "api": node.api.value if node.api else None,
            }
            if node.weight is not None:
                entry["weight"] = node.weight
            if node.info_time is not None:
                entry["info_time"] = to_iso(node.info_time)
            entry["status"] = node.status.value
            if node.response is not None:
                entry["response"] = [
                    item.model_dump(mode="json", exclude_none=True) for item in node.response
                ]
            if node.error:
                entry["error"] = node.error
            nodes.append(entry)
        return {
            "root": self.root,
            "nodes": nodes,
            "edges": [list(edge) for edge in sorted(self.edges)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "SearchGraph":
        """Inverse of ``to_dict``; graph errors propagate unchanged"""
        graph = cls(root=doc["root"])
        for entry in doc["nodes"]:
            graph.add_node(SearchNode(
                id=entry["id"],
                query=entry["query"],
                api=ApiKind(entry["api"]) if entry.get("api") else None,
                weight=entry.get("weight"),
                info_time=parse_iso(entry["info_time"]) if entry.get("info_time") else None,
                status=NodeStatus(entry.get("status", NodeStatus.PENDING.value)),
                response=(
                    [Evidence.model_validate(item) for item in entry["response"]]
                    if entry.get("response") is not None else None
                ),
                error=entry.get("error"),
            ))
        for src, dst in doc.get("edges", []):
            graph.add_edge(src, dst)
        return graph

    @classmethod
    def from_json(cls, text: str) -> "SearchGraph":
        return cls.from_dict(json.loads(text))
