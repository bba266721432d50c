from datetime import datetime
from typing import Any, Dict, List, Tuple

from backend.connectors.base import BaseConnector, clean_text, record_key
from backend.errors import ProviderError
from backend.models import ApiKind, Evidence
from backend.utils.dates import ensure_utc, to_iso


class NewsConnector(BaseConnector):
    """Date-windowed news search (NewsAPI ``/v2/everything`` payloads)"""

    api = ApiKind.NEWS
    MAX_RESULTS = 20

    def fetch_news(self, query: str, window_from: datetime, window_to: datetime) -> List[Evidence]:
        """
        News items about ``query`` published inside the window, newest first.

        Raises:
            ValueError: empty query or window_from > window_to
            ConnectorTransportError, ProviderError, FixtureMiss
        """
        items, _ = self.retrieve(query, window_from, window_to)
        return items

    def retrieve(self, query: str, window_from: datetime,
                 window_to: datetime) -> Tuple[List[Evidence], datetime]:
        if not query or not query.strip():
            raise ValueError("news query must not be empty")
        window_from, window_to = ensure_utc(window_from), ensure_utc(window_to)
        if window_from > window_to:
            raise ValueError(f"news window starts after it ends: {window_from} > {window_to}")

        key = record_key(self.api, [query, window_from, window_to])
        recorded = self.fetch_payload(key, lambda: self._search_live(query, window_from, window_to))
        items = self.parse(recorded.payload, recorded.recorded_at, window_from, window_to)
        self.log_action("news_search_completed", {"query": query, "num_results": len(items)})
        return items, recorded.recorded_at

    def _search_live(self, query: str, window_from: datetime, window_to: datetime) -> Any:
        params = {
            "q": query,
            "from": to_iso(window_from),
            "to": to_iso(window_to),
            "language": "en",
            "sortBy": "publishedAt",
            "pageSize": self.MAX_RESULTS,
            "apiKey": self.api_key,
        }
        return self.get_json(self.config.endpoint_url, params=params)

    def parse(self, payload: Dict[str, Any], retrieved_at: datetime,
              window_from: datetime, window_to: datetime) -> List[Evidence]:
        if payload.get("status") == "error":
            raise ProviderError(400, payload.get("message", payload.get("code", "")))

        raw_items = []
        for article in payload.get("articles", []):
            title = clean_text(article.get("title"))
            description = clean_text(article.get("description"))
            content = "\n\n".join(part for part in (title, description) if part)
            raw_items.append({
                "content": content,
                "source_name": (article.get("source") or {}).get("name"),
                "source_url": article.get("url"),
                "published_at": article.get("publishedAt"),
            })
        evidence = self.build_evidence(raw_items, retrieved_at)

        in_window = [
            item for item in evidence
            if item.published_at is None or window_from <= item.published_at <= window_to
        ]
        dated = sorted((i for i in in_window if i.published_at), key=lambda i: i.published_at,
                       reverse=True)
        undated = [i for i in in_window if i.published_at is None]
        return (dated + undated)[:self.MAX_RESULTS]
