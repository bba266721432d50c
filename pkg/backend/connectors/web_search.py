import time
from datetime import datetime
from typing import Any, Dict, List, Optional, Tuple

from duckduckgo_search import DDGS

from backend.connectors.base import BaseConnector, clean_text, record_key
from backend.errors import ConnectorTransportError
from backend.models import ApiKind, Evidence
from backend.utils.dates import parse_timestamp


class WebSearchConnector(BaseConnector):
    """General web search: SerpAPI (Google) when a key is configured, DuckDuckGo otherwise"""

    api = ApiKind.WEB_SEARCH
    MAX_RESULTS = 10

    @property
    def use_serpapi(self) -> bool:
        return bool(self.api_key)

    def fetch_web(self, query: str) -> List[Evidence]:
        """
        Up to ten results in provider rank order.

        Raises:
            ValueError: empty query
            ConnectorTransportError, ProviderError, FixtureMiss
        """
        items, _ = self.retrieve(query)
        return items

    def retrieve(self, query: str) -> Tuple[List[Evidence], datetime]:
        if not query or not query.strip():
            raise ValueError("web search query must not be empty")
        key = record_key(self.api, [query])
        recorded = self.fetch_payload(key, lambda: self._search_live(query))
        items = self.parse(recorded.payload, recorded.recorded_at)
        self.log_action("web_search_completed", {"query": query, "num_results": len(items)})
        return items, recorded.recorded_at

    def _search_live(self, query: str) -> Any:
        if self.use_serpapi:
            params = {
                "q": query,
                "api_key": self.api_key,
                "num": self.MAX_RESULTS,
                "engine": "google",
            }
            return self.get_json(self.config.endpoint_url, params=params)
        return {"results": self._search_duckduckgo(query)}

    def _search_duckduckgo(self, query: str) -> List[Dict[str, Any]]:
        for attempt in range(2):
            try:
                with DDGS() as ddgs:
                    return list(ddgs.text(query, max_results=self.MAX_RESULTS))
            except Exception as e:
                if "Ratelimit" in str(e) and attempt == 0:
                    self.log_action("rate_limit_retry", {"wait": self.RETRY_WAIT_SECONDS})
                    time.sleep(self.RETRY_WAIT_SECONDS)
                    continue
                raise ConnectorTransportError(f"duckduckgo: {e}") from e
        return []

    def parse(self, payload: Dict[str, Any], retrieved_at: datetime) -> List[Evidence]:
        raw_items = []
        if "organic_results" in payload:
            for result in payload["organic_results"]:
                raw_items.append(self._item(
                    result.get("title"), result.get("snippet"), result.get("link"),
                    result.get("source") or "Google (SerpAPI)", result.get("date"),
                ))
        else:
            for result in payload.get("results", []):
                raw_items.append(self._item(
                    result.get("title"), result.get("body"), result.get("href"),
                    "DuckDuckGo", None,
                ))
        return self.build_evidence(raw_items, retrieved_at)[:self.MAX_RESULTS]

    @staticmethod
    def _item(title: Optional[str], snippet: Optional[str], url: Optional[str],
              source: str, date_text: Optional[str]) -> Dict[str, Any]:
        try:
            published = parse_timestamp(date_text)
        except ValueError:
            # engines give display dates like "3 days ago"; treat as undated
            published = None
        content = "\n\n".join(part for part in (clean_text(title), clean_text(snippet)) if part)
        return {
            "content": content,
            "source_name": source,
            "source_url": url,
            "published_at": published,
        }
