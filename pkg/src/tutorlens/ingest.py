"""Transcript parsing and idle-gap sessionization.

Input is one JSON record per line with the RawEvent fields. Malformed
lines are never dropped silently: they land in a rejects report with
their line numbers so operators can audit corpus loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import IO, Iterable

from .core import Author, parse_ts
from .errors import CorpusCorruptError

DEFAULT_IDLE_GAP = timedelta(minutes=30)


@dataclass(frozen=True)
class RawEvent:
    """A dialogue event before pseudonymization and filtering."""

    student_id_raw: str
    author: Author
    timestamp: datetime
    text_raw: str
    course_id: str
    explicit_session_id: str | None = None


@dataclass(frozen=True)
class Reject:
    line_number: int
    reason: str
    raw: str


@dataclass(frozen=True)
class ParseResult:
    events: list[RawEvent]
    rejects: list[Reject]

    @property
    def reject_rate(self) -> float:
        total = len(self.events) + len(self.rejects)
        return len(self.rejects) / total if total else 0.0


_REQUIRED = ("student_id_raw", "author", "timestamp", "text_raw", "course_id")


def parse_event(record: dict) -> RawEvent:
    missing = [key for key in _REQUIRED if key not in record]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    return RawEvent(
        student_id_raw=str(record["student_id_raw"]),
        author=Author(record["author"]),
        timestamp=parse_ts(record["timestamp"]),
        text_raw=str(record["text_raw"]),
        course_id=str(record["course_id"]),
        explicit_session_id=record.get("explicit_session_id"),
    )


def parse_transcript(stream: IO[str] | Iterable[str]) -> ParseResult:
    """Parse a line-delimited record stream into events plus rejects.

    Raises CorpusCorruptError when more than half of the non-blank lines
    are malformed; an unreadable stream surfaces as OSError.
    """
    events: list[RawEvent] = []
    rejects: list[Reject] = []
    for line_number, line in enumerate(stream, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        try:
            record = json.loads(stripped)
            if not isinstance(record, dict):
                raise ValueError("record is not an object")
            events.append(parse_event(record))
        except (ValueError, KeyError, TypeError) as exc:
            rejects.append(Reject(line_number, str(exc), stripped[:200]))
    total = len(events) + len(rejects)
    if total and len(rejects) / total > 0.5:
        raise CorpusCorruptError(
            f"{len(rejects)}/{total} lines malformed; refusing to continue"
        )
    return ParseResult(events=events, rejects=rejects)


def _sort_key(event: RawEvent):
    return (event.timestamp, event.author.value, event.text_raw)


def sessionize(
    events: list[RawEvent], idle_gap: timedelta = DEFAULT_IDLE_GAP
) -> list[list[RawEvent]]:
    """Partition events into per-student session groups.

    Events sharing an explicit_session_id stay together; otherwise a new
    group starts whenever the same student pauses longer than ``idle_gap``.
    Internal sorting makes the result input-order insensitive. Groups come
    back ordered by start time.
    """
    by_student: dict[str, list[RawEvent]] = {}
    for event in events:
        by_student.setdefault(event.student_id_raw, []).append(event)

    groups: list[list[RawEvent]] = []
    for student_events in by_student.values():
        student_events.sort(key=_sort_key)
        explicit: dict[str, list[RawEvent]] = {}
        current: list[RawEvent] = []
        prev_ts: datetime | None = None
        for event in student_events:
            if event.explicit_session_id is not None:
                explicit.setdefault(event.explicit_session_id, []).append(event)
                continue
            if prev_ts is not None and event.timestamp - prev_ts > idle_gap:
                groups.append(current)
                current = []
            current.append(event)
            prev_ts = event.timestamp
        if current:
            groups.append(current)
        groups.extend(explicit.values())

    groups.sort(key=lambda group: (_sort_key(group[0]), group[0].student_id_raw))
    return groups
