from datetime import datetime, timedelta
from typing import List, Optional, Tuple

import requests

from backend.config import ConnectorConfig
from backend.connectors.finance import FinanceConnector, parse_finance_query
from backend.connectors.news import NewsConnector
from backend.connectors.web_search import WebSearchConnector
from backend.models import ApiKind, Evidence, SearchNode
from backend.storage.fixture_store import FixtureStore


class ConnectorHub:
    """Routes a node's sub-query to the connector for its ApiKind"""

    def __init__(self, news: NewsConnector, web: WebSearchConnector, finance: FinanceConnector,
                 news_lookback_days: int = 7, finance_lookback_days: int = 7):
        self.news = news
        self.web = web
        self.finance = finance
        self.news_lookback_days = news_lookback_days
        self.finance_lookback_days = finance_lookback_days

    @classmethod
    def from_config(cls, config: ConnectorConfig, store: FixtureStore,
                    session: Optional[requests.Session] = None) -> "ConnectorHub":
        kwargs = {"timeout": config.timeout_seconds, "session": session}
        return cls(
            news=NewsConnector(store, config.news, **kwargs),
            web=WebSearchConnector(store, config.web, **kwargs),
            finance=FinanceConnector(store, config.finance, **kwargs),
            news_lookback_days=config.news_lookback_days,
            finance_lookback_days=config.finance_lookback_days,
        )

    def news_window(self, now: datetime) -> Tuple[datetime, datetime]:
        return now - timedelta(days=self.news_lookback_days), now

    def execute(self, api: ApiKind, query: str, now: datetime) -> Tuple[List[Evidence], datetime]:
        """
        Run one sub-query. Returns the evidence and the retrieval time.

        Connector errors propagate; the executor turns them into node state.
        """
        if api == ApiKind.NEWS:
            window_from, window_to = self.news_window(now)
            return self.news.retrieve(query, window_from, window_to)
        if api == ApiKind.WEB_SEARCH:
            return self.web.retrieve(query)
        if api == ApiKind.FINANCE:
            symbol, start, end, interval = parse_finance_query(
                query, now, self.finance_lookback_days)
            bars, retrieved_at = self.finance.retrieve(symbol, start, end, interval)
            item = self.finance.as_evidence(symbol, interval, bars, retrieved_at)
            return ([item] if item else []), retrieved_at
        raise ValueError(f"unsupported api {api}")

    def execute_node(self, node: SearchNode, now: datetime) -> Tuple[List[Evidence], datetime]:
        return self.execute(node.api, node.query, now)
