from .dates import ensure_utc, parse_iso, resolve_relative_date, to_iso

__all__ = [
    "ensure_utc",
    "parse_iso",
    "resolve_relative_date",
    "to_iso",
]
