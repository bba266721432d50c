from typing import Any, Dict, List, Optional


class EngineError(Exception):
    """Base class for all engine errors. ``exit_code`` is what the CLI returns."""

    exit_code = 1


# Configuration

class ConfigError(EngineError):
    exit_code = 2


# Search graph

class GraphError(EngineError):
    exit_code = 3


class DuplicateNodeId(GraphError):
    def __init__(self, node_id: str):
        super().__init__(f"node id already present: {node_id}")
        self.node_id = node_id


class UnknownNode(GraphError):
    def __init__(self, node_id: str):
        super().__init__(f"unknown node: {node_id}")
        self.node_id = node_id


class SelfLoop(GraphError):
    def __init__(self, node_id: str):
        super().__init__(f"self-loop on node {node_id}")
        self.node_id = node_id


class CycleDetected(GraphError):
    def __init__(self, src: str, dst: str):
        super().__init__(f"CycleDetected: edge {src} -> {dst} would close a cycle")
        self.src = src
        self.dst = dst


# LLM gateway

class LlmError(EngineError):
    exit_code = 4


class TransportError(EngineError):
    """Network-level failure talking to a backend or provider."""


class LlmTransportError(LlmError, TransportError):
    pass


class BackendRefusal(LlmError):
    def __init__(self, message: str, status_code: Optional[int] = None):
        super().__init__(message)
        self.status_code = status_code


class ScriptExhausted(LlmError):
    def __init__(self, role: str):
        super().__init__(f"script has no entry left for role {role}")
        self.role = role


class ScriptParseError(LlmError):
    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field:
            location.append(f"field {field}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.field = field


# Planning

class PlanningError(EngineError):
    exit_code = 3


class PlanParseError(PlanningError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


class PlanInvalid(PlanningError):
    def __init__(self, violations: List[Any]):
        kinds = ", ".join(str(v) for v in violations)
        super().__init__(f"plan violates graph invariants: {kinds}")
        self.violations = list(violations)


class UnresolvableDateExpr(PlanningError):
    def __init__(self, expr: str):
        super().__init__(f"unsupported date expression: {expr!r}")
        self.expr = expr


class FarFutureDate(PlanningError):
    def __init__(self, surface_form: str, resolved: Any):
        super().__init__(f"{surface_form!r} resolves to {resolved}, too far in the future")
        self.surface_form = surface_form


# Connectors

class ConnectorError(EngineError):
    exit_code = 5


class ConnectorTransportError(ConnectorError, TransportError):
    pass


class ProviderError(ConnectorError):
    def __init__(self, code: int, message: str = ""):
        super().__init__(f"provider returned {code}{': ' + message if message else ''}")
        self.code = code


class FixtureMiss(ConnectorError):
    def __init__(self, key: str):
        super().__init__(f"no recorded fixture for {key}")
        self.key = key


class UnknownSymbol(ConnectorError):
    def __init__(self, symbol: str):
        super().__init__(f"unknown symbol: {symbol}")
        self.symbol = symbol


class DataIntegrityError(ConnectorError):
    """Upstream data violates a value invariant (e.g. OHLC low > high)."""


class FixtureWriteError(ConnectorError):
    pass


# Report generation

class GenerationError(EngineError):
    exit_code = 4


class GenerationEmpty(GenerationError):
    def __init__(self):
        super().__init__("generator returned blank output after retry")


# Benchmark

class BenchmarkError(EngineError):
    exit_code = 2


class QuestionParseError(BenchmarkError):
    def __init__(self, problems: Dict[int, str]):
        lines = "; ".join(f"line {n}: {msg}" for n, msg in sorted(problems.items()))
        super().__init__(f"malformed question file ({len(problems)} bad lines): {lines}")
        self.problems = dict(problems)


class NoChoiceFound(BenchmarkError):
    def __init__(self, text: str):
        super().__init__(f"no answer letter found in: {text[:80]!r}")


# Execution

class RewriterParseError(EngineError):
    """Rewriter output is neither KEEP nor a decisions document"""
