import os
import time
from abc import ABC
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Union

import requests
from bs4 import BeautifulSoup
from loguru import logger
from pydantic import ValidationError

from backend.config import ProviderConfig
from backend.errors import ConnectorTransportError, ProviderError
from backend.models import ApiKind, Evidence, FixturesMode
from backend.storage.fixture_store import FixtureStore, RecordedPayload
from backend.utils.dates import ensure_utc, parse_timestamp, to_iso

API_NAMES = {
    ApiKind.NEWS: "news",
    ApiKind.WEB_SEARCH: "web",
    ApiKind.FINANCE: "finance",
}

RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def _canonical(value: Any) -> str:
    if isinstance(value, datetime):
        return to_iso(value)
    if isinstance(value, Enum):
        value = value.value
    return " ".join(str(value).strip().lower().split())


def record_key(api: Union[ApiKind, str], params: Union[Iterable[Any], Dict[str, Any]]) -> str:
    """
    Deterministic fixture key: api name plus canonicalized params joined by "|".

    Text is lowercased, trimmed and whitespace-collapsed; timestamps are
    rendered as ISO-8601 UTC.
    """
    name = API_NAMES[api] if isinstance(api, ApiKind) else _canonical(api)
    values = params.values() if isinstance(params, dict) else params
    return "|".join([name] + [_canonical(v) for v in values])


def clean_text(html: Optional[str]) -> str:
    """Strip markup and collapse whitespace in provider text"""
    if not html:
        return ""
    text = BeautifulSoup(html, "html.parser").get_text(" ")
    return " ".join(text.split())


class BaseConnector(ABC):
    """
    Provider client with record/replay support.

    Replay mode reads the fixture store only and never opens a connection.
    Record mode persists each live payload before it is parsed and returned.
    """

    api: ApiKind
    RETRY_WAIT_SECONDS = 1.0

    def __init__(self, store: FixtureStore, config: ProviderConfig,
                 timeout: float = 10.0, session: Optional[requests.Session] = None):
        self.store = store
        self.config = config
        self.timeout = timeout
        self._session = session

    @property
    def name(self) -> str:
        return API_NAMES[self.api]

    @property
    def session(self) -> requests.Session:
        if self._session is None:
            self._session = requests.Session()
            self._session.headers.update({
                "User-Agent": "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36"
            })
        return self._session

    @property
    def api_key(self) -> Optional[str]:
        if not self.config.api_key_env:
            return None
        return os.environ.get(self.config.api_key_env)

    def log_action(self, action: str, details: Dict[str, Any] = None):
        logger.bind(agent=f"{self.name}-connector").info("{}: {}", action, details or {})

    def fetch_payload(self, key: str, live_call: Callable[[], Any]) -> RecordedPayload:
        mode = self.store.mode
        if mode == FixturesMode.REPLAY:
            return self.store.load(key)
        payload = live_call()
        now = datetime.now(timezone.utc)
        if mode == FixturesMode.RECORD:
            return self.store.save(key, self.name, payload, recorded_at=now)
        return RecordedPayload(key, self.name, payload, now)

    def get_json(self, url: str, params: Dict[str, Any] = None,
                 headers: Dict[str, str] = None) -> Any:
        """
        GET with one retry on transport failure, HTTP 429 and 5xx.

        Raises:
            ConnectorTransportError, ProviderError(status)
        """
        for attempt in range(2):
            try:
                response = self.session.get(url, params=params, headers=headers,
                                            timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as e:
                if attempt == 0:
                    self.log_action("transport_retry", {"url": url, "error": str(e)})
                    time.sleep(self.RETRY_WAIT_SECONDS)
                    continue
                raise ConnectorTransportError(f"{self.name}: {e}") from e

            if response.status_code in RETRYABLE_STATUS and attempt == 0:
                self.log_action("status_retry", {"url": url, "status": response.status_code})
                time.sleep(self.RETRY_WAIT_SECONDS)
                continue
            if not 200 <= response.status_code < 300:
                raise ProviderError(response.status_code, response.text[:200])
            try:
                return response.json()
            except ValueError as e:
                raise ProviderError(response.status_code, f"non-JSON body: {e}") from e
        raise ConnectorTransportError(f"{self.name}: retries exhausted")

    def build_evidence(self, items: List[Dict[str, Any]], retrieved_at: datetime) -> List[Evidence]:
        """Validate raw items at the boundary; junk items are dropped with a warning"""
        evidence = []
        for raw in items:
            try:
                evidence.append(Evidence(
                    content=raw["content"],
                    source_name=raw.get("source_name") or self.name,
                    source_url=raw.get("source_url") or "",
                    published_at=parse_timestamp(raw.get("published_at")),
                    retrieved_at=ensure_utc(retrieved_at),
                ))
            except (ValidationError, ValueError, KeyError) as e:
                logger.bind(agent=f"{self.name}-connector").warning(
                    "dropping malformed item {!r}: {}", raw.get("source_url"), e)
        return evidence
