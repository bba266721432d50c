from pydantic import BaseModel, Field, AfterValidator, PlainSerializer, ConfigDict, model_validator
from typing import List, Optional, Dict, Any, Literal
from typing_extensions import Annotated
from datetime import datetime, date
from enum import Enum

from backend.utils.dates import ensure_utc, to_iso


UtcDatetime = Annotated[
    datetime,
    AfterValidator(ensure_utc),
    PlainSerializer(to_iso, return_type=str, when_used="json"),
]

# Upper bound on any temporal weight (24h numerator over a 1h floor).
MAX_WEIGHT = 24.0


class ApiKind(str, Enum):
    """Data sources a sub-query can be routed to"""
    NEWS = "News"
    WEB_SEARCH = "WebSearch"
    FINANCE = "Finance"


class NodeStatus(str, Enum):
    PENDING = "Pending"
    EXECUTED = "Executed"
    FAILED = "Failed"


class RoleTag(str, Enum):
    """LLM roles; scripted backends keep one cursor per role"""
    PLANNER = "Planner"
    REWRITER = "Rewriter"
    GENERATOR = "Generator"
    ANSWERER = "Answerer"


class FixturesMode(str, Enum):
    RECORD = "record"
    REPLAY = "replay"
    LIVE = "live"


class ViolationKind(str, Enum):
    NO_ROOT = "NoRoot"
    ROOT_HAS_PARENT = "RootHasParent"
    MULTIPLE_ROOTS = "MultipleRoots"
    UNREACHABLE_NODE = "UnreachableNode"
    CYCLE_DETECTED = "CycleDetected"
    SELF_LOOP = "SelfLoop"
    EMPTY_QUERY = "EmptyQuery"
    MISSING_API = "MissingApi"
    TOO_MANY_NODES = "TooManyNodes"
    PREFILLED_FIELD = "PrefilledField"


class Violation(BaseModel):
    """A broken graph invariant; reported as data, never raised"""
    model_config = ConfigDict(frozen=True)

    kind: ViolationKind
    node_ids: List[str] = []
    detail: str = ""

    def __str__(self):
        if self.node_ids:
            return f"{self.kind.value}({', '.join(self.node_ids)})"
        return self.kind.value


# ---------------------------------------------------------------------------
# Retrieval
# ---------------------------------------------------------------------------

class OhlcBar(BaseModel):
    """One candlestick sample"""
    time: UtcDatetime
    open: float = Field(gt=0)
    high: float = Field(gt=0)
    low: float = Field(gt=0)
    close: float = Field(gt=0)
    volume: Optional[float] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def check_range(self):
        if self.low > self.high:
            raise ValueError(f"low {self.low} above high {self.high}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValueError("open/close outside the low..high range")
        return self


class Evidence(BaseModel):
    """One timestamped retrieval result with source attribution"""
    content: str = Field(..., min_length=1)
    source_name: str
    source_url: str = ""
    published_at: Optional[UtcDatetime] = None
    retrieved_at: UtcDatetime
    weight: Optional[float] = Field(default=None, ge=0, le=MAX_WEIGHT)
    symbol: Optional[str] = None
    bars: Optional[List[OhlcBar]] = None

    @model_validator(mode="after")
    def check_times(self):
        if self.published_at is not None and self.published_at > self.retrieved_at:
            raise ValueError("published_at is after retrieved_at")
        return self


# ---------------------------------------------------------------------------
# Search graph
# ---------------------------------------------------------------------------

class SearchNode(BaseModel):
    """A sub-query node: query, api, weight, info_time and response features"""
    id: str = Field(..., min_length=1)
    query: str
    api: Optional[ApiKind] = None
    weight: Optional[float] = Field(default=None, ge=0, le=MAX_WEIGHT)
    info_time: Optional[UtcDatetime] = None
    response: Optional[List[Evidence]] = None
    status: NodeStatus = NodeStatus.PENDING
    error: Optional[str] = None

    @model_validator(mode="after")
    def check_status(self):
        if self.status == NodeStatus.EXECUTED and self.response is None:
            raise ValueError(f"node {self.id} is Executed without a response")
        if self.status == NodeStatus.PENDING and self.response is not None:
            raise ValueError(f"node {self.id} is Pending but carries a response")
        return self

    @property
    def is_done(self) -> bool:
        return self.status in (NodeStatus.EXECUTED, NodeStatus.FAILED)

    def evolve(self, **changes) -> "SearchNode":
        """Validated copy with ``changes`` applied"""
        return SearchNode(**{**dict(self), **changes})


# ---------------------------------------------------------------------------
# LLM gateway
# ---------------------------------------------------------------------------

class LlmRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    role_tag: RoleTag
    prompt: str = Field(..., min_length=1)
    max_output: int = Field(default=1024, gt=0)
    temperature: float = Field(default=0.0, ge=0.0, le=1.0)


class LlmScriptEntry(BaseModel):
    role: RoleTag
    response: str


class LlmCall(BaseModel):
    """Metadata kept for every completed call"""
    role_tag: RoleTag
    latency_seconds: float = 0.0
    prompt_chars: int = 0
    response_chars: int = 0


# ---------------------------------------------------------------------------
# Planning / execution
# ---------------------------------------------------------------------------

class ResolvedDate(BaseModel):
    surface_form: str
    resolved: date


class QueryContext(BaseModel):
    """The user query plus its reference time and normalized dates"""
    user_query: str = Field(..., min_length=1)
    now: UtcDatetime
    resolved_dates: List[ResolvedDate] = []


class PlanDraft(BaseModel):
    raw_llm_text: str
    parsed: Optional[Any] = None  # SearchGraph
    violations: List[Violation] = []

    @model_validator(mode="after")
    def check_parsed(self):
        if (self.parsed is not None) == bool(self.violations):
            raise ValueError("parsed must be present exactly when there are no violations")
        return self


class ExecutionOptions(BaseModel):
    """Ablation switches and parallelism for one run"""
    enable_rewriter: bool = True
    enable_temporal_weighting: bool = True
    max_parallel_nodes: int = Field(default=1, ge=1)


class RewriteDecision(BaseModel):
    child_id: str
    action: Literal["keep", "replace"] = "keep"
    new_query: Optional[str] = None

    @model_validator(mode="after")
    def check_replace(self):
        if self.action == "replace" and not (self.new_query or "").strip():
            raise ValueError("replace decision needs a non-empty query")
        return self


class TemporalParams(BaseModel):
    """Time-decay constants, all in hours"""
    window_hours: float = Field(default=72.0, gt=0)
    numerator_hours: float = Field(default=24.0, gt=0)
    min_delta_hours: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def check_order(self):
        if self.numerator_hours > self.window_hours:
            raise ValueError("numerator_hours must not exceed window_hours")
        if self.min_delta_hours > self.numerator_hours:
            raise ValueError("min_delta_hours must not exceed numerator_hours")
        if self.max_weight > MAX_WEIGHT:
            raise ValueError(f"numerator_hours / min_delta_hours must not exceed {MAX_WEIGHT:g}")
        return self

    @property
    def max_weight(self) -> float:
        return self.numerator_hours / self.min_delta_hours


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

class WeightedEvidence(BaseModel):
    evidence: Evidence
    weight: float = Field(ge=0, le=MAX_WEIGHT)
    origin_node: str
    item_index: int = Field(default=0, ge=0)
    citation_index: int = Field(default=1, ge=1)


class ChartSeries(BaseModel):
    symbol: str
    title: str
    bars: List[OhlcBar] = Field(..., min_length=1)

    @model_validator(mode="after")
    def check_ascending(self):
        times = [bar.time for bar in self.bars]
        if any(a >= b for a, b in zip(times, times[1:])):
            raise ValueError("chart bars must be strictly ascending in time")
        return self


class SourceEntry(BaseModel):
    index: int
    source_name: str
    source_url: str = ""
    published_at: Optional[UtcDatetime] = None


class Report(BaseModel):
    """Synthesized answer with inline [n] citations"""
    query: str
    narrative: str
    sources: List[SourceEntry] = []
    charts: List[ChartSeries] = []
    generated_at: UtcDatetime
    failed_nodes: List[str] = []


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

class Category(str, Enum):
    STOCK_MARKET = "stock_market"
    RATE_CHANGES = "rate_changes"
    MONETARY_POLICY = "monetary_policy"
    INDUSTRY_DEVELOPMENTS = "industry_developments"


Letter = Literal["A", "B", "C", "D"]


class BenchmarkQuestion(BaseModel):
    """Timestamped four-choice item"""
    id: str = Field(..., min_length=1)
    timestamp: UtcDatetime
    stem: str = Field(..., min_length=1)
    choices: Dict[Letter, str]
    answer_key: Letter
    category: Category

    @model_validator(mode="after")
    def check_choices(self):
        if sorted(self.choices) != ["A", "B", "C", "D"]:
            raise ValueError(f"expected exactly four choices A-D, got {sorted(self.choices)}")
        return self

    def as_query(self) -> str:
        options = "\n".join(f"{label}. {self.choices[label]}" for label in sorted(self.choices))
        return f"{self.stem}\n{options}"


class QuestionRecord(BaseModel):
    id: str
    category: Category
    answer_key: Letter
    predicted: Optional[Letter] = None
    correct: bool = False
    unparsed: bool = False
    seconds: float = 0.0
    error: Optional[str] = None


class CategoryResult(BaseModel):
    n: int
    correct: int
    accuracy_pct: float
    std_pct: float
    mean_seconds: float
    std_seconds: float = 0.0


class BenchmarkResult(BaseModel):
    n: int = Field(ge=0)
    correct: int = Field(ge=0)
    unparsed: int = 0
    accuracy_pct: float = 0.0
    std_pct: float = 0.0
    mean_seconds: float = 0.0
    std_seconds: float = 0.0
    per_category: Dict[str, CategoryResult] = {}
    options_used: ExecutionOptions
    search_enabled: bool = True
    records: List[QuestionRecord] = []

    @model_validator(mode="after")
    def check_counts(self):
        if self.correct > self.n:
            raise ValueError("correct exceeds n")
        return self
