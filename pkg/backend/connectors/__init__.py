from .base import BaseConnector, record_key
from .news import NewsConnector
from .web_search import WebSearchConnector
from .finance import FinanceConnector, parse_finance_query
from .hub import ConnectorHub

__all__ = [
    "BaseConnector",
    "record_key",
    "NewsConnector",
    "WebSearchConnector",
    "FinanceConnector",
    "parse_finance_query",
    "ConnectorHub",
]
