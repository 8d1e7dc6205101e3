from __future__ import annotations

from datetime import datetime, timezone


def parse_time(text: str) -> int:
    """Integer epoch seconds or an ISO-8601 timestamp (naive means UTC)."""
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        return int(text)
    except ValueError:
        pass
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return int(stamp.timestamp())
