from .search_graph import SearchGraph
from .fixture_store import FixtureStore, RecordedPayload

__all__ = [
    "SearchGraph",
    "FixtureStore",
    "RecordedPayload",
]
