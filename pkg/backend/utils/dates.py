"""Timestamp helpers and relative-date resolution.

All timestamps inside the engine are timezone-aware UTC. Naive values coming
from upstream data are assumed to be UTC (a warning is logged).
"""
import re
from datetime import date, datetime, timedelta, timezone
from typing import Optional, Union

from loguru import logger

from backend.errors import UnresolvableDateExpr

WEEKDAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]

ABSOLUTE_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
DAYS_AGO = re.compile(r"^(\d+) days? ago$")
LAST_WEEKDAY = re.compile(r"^last (" + "|".join(WEEKDAYS) + r")$")

# Order matters: the scanner tries longer forms first.
RELATIVE_SURFACE_FORMS = re.compile(
    r"\b(today|yesterday|\d+ days? ago|last (?:" + "|".join(WEEKDAYS) + r")"
    r"|last week|last month|this week|this quarter|\d{4}-\d{2}-\d{2})\b",
    re.IGNORECASE,
)


def ensure_utc(value: datetime) -> datetime:
    """Return ``value`` as an aware UTC datetime."""
    if value.tzinfo is None:
        logger.warning("timestamp {} has no timezone, interpreting as UTC", value.isoformat())
        return value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc)


def to_iso(value: datetime) -> str:
    """ISO-8601 UTC with a ``Z`` suffix; fractional seconds only when present."""
    value = ensure_utc(value)
    if value.microsecond:
        return value.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return value.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z") or text.endswith("z"):
        text = text[:-1] + "+00:00"
    if ABSOLUTE_DATE.match(text):
        return datetime.fromisoformat(text).replace(tzinfo=timezone.utc)
    return ensure_utc(datetime.fromisoformat(text))


def parse_timestamp(value: Union[str, int, float, datetime, None]) -> Optional[datetime]:
    """Lenient parser for upstream timestamps (ISO strings or epoch seconds)."""
    if value is None or value == "":
        return None
    if isinstance(value, datetime):
        return ensure_utc(value)
    if isinstance(value, (int, float)):
        return datetime.fromtimestamp(value, tz=timezone.utc)
    return parse_iso(str(value))


def start_of_day(day: date) -> datetime:
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc)


def resolve_relative_date(expr: str, now: datetime) -> date:
    """
    Convert a relative time reference into an absolute calendar date.

    Supported grammar: today, yesterday, N days ago, last <weekday>,
    last week, last month, this week, this quarter, and absolute
    YYYY-MM-DD dates (returned unchanged).

    Raises:
        UnresolvableDateExpr: expression outside the grammar or the calendar
    """
    text = " ".join(expr.strip().lower().split())
    today = ensure_utc(now).date()

    if ABSOLUTE_DATE.match(text):
        try:
            return date.fromisoformat(text)
        except ValueError:
            raise UnresolvableDateExpr(expr)

    if text == "today":
        return today
    if text == "yesterday":
        return today - timedelta(days=1)

    match = DAYS_AGO.match(text)
    if match:
        try:
            return today - timedelta(days=int(match.group(1)))
        except OverflowError:
            raise UnresolvableDateExpr(expr)

    match = LAST_WEEKDAY.match(text)
    if match:
        target = WEEKDAYS.index(match.group(1))
        # strictly previous occurrence: 1..7 days back
        back = (today.weekday() - target) % 7 or 7
        return today - timedelta(days=back)

    if text == "this week":
        return today - timedelta(days=today.weekday())
    if text == "last week":
        return today - timedelta(days=today.weekday() + 7)
    if text == "last month":
        first_of_month = today.replace(day=1)
        return (first_of_month - timedelta(days=1)).replace(day=1)
    if text == "this quarter":
        quarter_month = 3 * ((today.month - 1) // 3) + 1
        return today.replace(month=quarter_month, day=1)

    raise UnresolvableDateExpr(expr)
