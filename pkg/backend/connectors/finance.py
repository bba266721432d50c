import re
from datetime import date, datetime, timedelta
from typing import Any, Dict, List, Optional, Tuple

from pydantic import ValidationError

from backend.connectors.base import BaseConnector, record_key
from backend.errors import DataIntegrityError, ProviderError, UnknownSymbol
from backend.models import ApiKind, Evidence, OhlcBar
from backend.utils.dates import ensure_utc, start_of_day, to_iso

SYMBOL_PATTERN = re.compile(r"^[A-Za-z0-9.^-]{1,12}$")
ISO_DATE = re.compile(r"\b(\d{4}-\d{2}-\d{2})\b")
MINUTE_HINT = re.compile(r"\b(1m|minute|intraday)\b", re.IGNORECASE)
INTERVALS = ("1m", "1d")
MAX_MINUTE_RANGE = timedelta(days=7)


def parse_finance_query(query: str, now: datetime,
                        lookback_days: int = 7) -> Tuple[str, datetime, datetime, str]:
    """
    Turn a Finance sub-query into (symbol, start, end, interval).

    The first token is the ticker. Two ISO dates give the range with both
    days included, one date gives that single day, none gives the lookback
    window ending at ``now``.
    "1m", "minute" or "intraday" select one-minute bars.
    """
    tokens = query.strip().split()
    if not tokens:
        raise ValueError("finance query must start with a ticker symbol")
    symbol = tokens[0].lstrip("$").rstrip(",:;").upper()

    dates: List[date] = []
    for text in ISO_DATE.findall(query):
        try:
            dates.append(date.fromisoformat(text))
        except ValueError:
            continue

    if len(dates) >= 2:
        start = start_of_day(min(dates))
        end = start_of_day(max(dates)) + timedelta(days=1)
    elif len(dates) == 1:
        start = start_of_day(dates[0])
        end = start + timedelta(days=1)
    else:
        end = ensure_utc(now)
        start = end - timedelta(days=lookback_days)

    interval = "1m" if MINUTE_HINT.search(query) else "1d"
    return symbol, start, end, interval


class FinanceConnector(BaseConnector):
    """OHLC history (Yahoo Finance chart API payloads)"""

    api = ApiKind.FINANCE
    SOURCE_NAME = "Yahoo Finance"

    def fetch_finance(self, symbol: str, start: datetime, end: datetime,
                      interval: str = "1d") -> List[OhlcBar]:
        """
        Candlesticks for ``symbol`` in [start, end], strictly ascending.

        Raises:
            ValueError: bad symbol, empty range, unknown interval, 1m over 7 days
            UnknownSymbol, DataIntegrityError, ConnectorTransportError, FixtureMiss
        """
        bars, _ = self.retrieve(symbol, start, end, interval)
        return bars

    def retrieve(self, symbol: str, start: datetime, end: datetime,
                 interval: str = "1d") -> Tuple[List[OhlcBar], datetime]:
        if not SYMBOL_PATTERN.match(symbol or ""):
            raise ValueError(f"invalid symbol {symbol!r}")
        start, end = ensure_utc(start), ensure_utc(end)
        if start >= end:
            raise ValueError(f"finance range is empty: {to_iso(start)} >= {to_iso(end)}")
        if interval not in INTERVALS:
            raise ValueError(f"interval must be one of {INTERVALS}, got {interval!r}")
        if interval == "1m" and end - start > MAX_MINUTE_RANGE:
            raise ValueError("1m bars are only available for ranges up to 7 days")

        key = record_key(self.api, [symbol, start, end, interval])
        recorded = self.fetch_payload(key, lambda: self._chart_live(symbol, start, end, interval))
        bars = self.parse(recorded.payload, symbol, start, end)
        self.log_action("finance_fetch_completed", {"symbol": symbol, "num_bars": len(bars)})
        return bars, recorded.recorded_at

    def _chart_live(self, symbol: str, start: datetime, end: datetime, interval: str) -> Any:
        url = f"{self.config.endpoint_url.rstrip('/')}/{symbol}"
        params = {
            "period1": int(start.timestamp()),
            "period2": int(end.timestamp()),
            "interval": interval,
        }
        try:
            return self.get_json(url, params=params)
        except ProviderError as e:
            if e.code == 404:
                raise UnknownSymbol(symbol) from e
            raise

    def parse(self, payload: Dict[str, Any], symbol: str,
              start: datetime, end: datetime) -> List[OhlcBar]:
        chart = payload.get("chart") or {}
        error = chart.get("error")
        if error:
            if error.get("code") == "Not Found":
                raise UnknownSymbol(symbol)
            raise ProviderError(400, error.get("description", ""))
        results = chart.get("result") or []
        if not results:
            raise UnknownSymbol(symbol)

        result = results[0]
        timestamps = result.get("timestamp") or []
        quote = ((result.get("indicators") or {}).get("quote") or [{}])[0]
        bars: List[OhlcBar] = []
        for i, ts in enumerate(timestamps):
            values = [(quote.get(field) or [None] * len(timestamps))[i]
                      for field in ("open", "high", "low", "close", "volume")]
            if any(v is None for v in values[:4]):
                continue  # trading gap
            try:
                bar = OhlcBar(
                    time=datetime.fromtimestamp(ts, tz=start.tzinfo),
                    open=values[0], high=values[1], low=values[2], close=values[3],
                    volume=values[4],
                )
            except ValidationError as e:
                raise DataIntegrityError(f"{symbol} bar at {ts}: {e.errors()[0]['msg']}") from e
            if start <= bar.time <= end:
                bars.append(bar)

        if any(a.time >= b.time for a, b in zip(bars, bars[1:])):
            raise DataIntegrityError(f"{symbol} bars are not strictly increasing in time")
        return bars

    def as_evidence(self, symbol: str, interval: str, bars: List[OhlcBar],
                    retrieved_at: datetime) -> Optional[Evidence]:
        """Wrap a bar series as one structured evidence item"""
        if not bars:
            return None
        first, last = bars[0], bars[-1]
        change = (last.close - first.open) / first.open * 100
        content = (
            f"{symbol} {interval} prices {first.time.date()} to {last.time.date()}: "
            f"open {first.open:.2f}, close {last.close:.2f}, "
            f"high {max(b.high for b in bars):.2f}, low {min(b.low for b in bars):.2f}, "
            f"change {change:+.2f}% over {len(bars)} bars"
        )
        try:
            return Evidence(
                content=content,
                source_name=self.SOURCE_NAME,
                source_url=f"https://finance.yahoo.com/quote/{symbol}",
                published_at=last.time,
                retrieved_at=retrieved_at,
                symbol=symbol,
                bars=bars,
            )
        except ValidationError as e:
            raise DataIntegrityError(f"{symbol}: {e.errors()[0]['msg']}") from e
