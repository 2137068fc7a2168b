"""Shared domain model: messages, sessions, taxonomy, labels, distributions.

All types here are immutable values and safe to share between workers.
Canonical serialization is one UTF-8 JSON object per record with field
order fixed by the dataclass definitions, so equal values are byte-equal.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum

from .errors import InvalidLabelError, NoDominantCategoryError, ValidationError


class Author(str, Enum):
    STUDENT = "student"
    ASSISTANT = "assistant"


# ---------------------------------------------------------------------------
# Timestamps: UTC instants at millisecond precision, canonical ISO-8601 "Z".
# ---------------------------------------------------------------------------

def format_ts(ts: datetime) -> str:
    """Render a UTC instant as e.g. ``2024-10-07T09:15:00.000Z``."""
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    ms = ts.microsecond // 1000
    return ts.strftime("%Y-%m-%dT%H:%M:%S") + f".{ms:03d}Z"


def parse_ts(raw: str) -> datetime:
    """Parse an ISO-8601 instant; truncates to millisecond precision."""
    text = raw.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=(ts.microsecond // 1000) * 1000)


# ---------------------------------------------------------------------------
# Code block detection (cheap, deterministic; feeds the risk module).
# A fenced region opens/closes on ``` lines; an indented block is a line with
# >=4 leading spaces immediately after a blank line, outside any fence.
# ---------------------------------------------------------------------------

_FENCE = re.compile(r"^\s*```")


def count_code_blocks(text: str) -> int:
    count = 0
    in_fence = False
    prev_blank = True
    for line in text.split("\n"):
        if _FENCE.match(line):
            if not in_fence:
                count += 1
            in_fence = not in_fence
            prev_blank = False
            continue
        if not in_fence and prev_blank and line.startswith("    ") and line.strip():
            count += 1
        prev_blank = not line.strip()
    return count


def strip_code_blocks(text: str) -> str:
    """Drop fenced regions and indented code lines, keeping prose."""
    kept: list[str] = []
    in_fence = False
    prev_blank = True
    in_indent = False
    for line in text.split("\n"):
        if _FENCE.match(line):
            in_fence = not in_fence
            prev_blank = False
            in_indent = False
            continue
        if in_fence:
            continue
        if line.startswith("    ") and line.strip() and (prev_blank or in_indent):
            in_indent = True
            prev_blank = False
            continue
        in_indent = False
        prev_blank = not line.strip()
        kept.append(line)
    return "\n".join(kept)


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop empties."""
    return [tok for tok in _TOKEN_SPLIT.split(text.lower()) if tok]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Message:
    """One privacy-filtered dialogue turn.

    ``redactions`` are (start, end, rule_id) spans over the ORIGINAL text;
    they must be sorted and non-overlapping. ``token_count`` survives even
    under counts_only policy, where ``text`` is emptied.
    """

    message_id: str
    author: Author
    timestamp: datetime
    text: str
    redactions: tuple[tuple[int, int, str], ...] = ()
    code_blocks: int = 0
    token_count: int = 0

    def __post_init__(self):
        prev_end = -1
        for start, end, _rule in self.redactions:
            if start < prev_end:
                raise ValidationError(
                    [f"redaction spans overlap or unsorted at offset {start}"]
                )
            if end < start:
                raise ValidationError([f"redaction span inverted at offset {start}"])
            prev_end = end


@dataclass(frozen=True)
class Session:
    """One help-seeking episode: ordered filtered messages for one student."""

    session_id: str
    student_ref: str
    course_id: str
    messages: tuple[Message, ...]
    started_at: datetime
    ended_at: datetime
    week_tag: str | None = None
    topic_tag: str | None = None
    policy: str = "redacted_log"

    def __post_init__(self):
        violations = []
        if not self.messages:
            violations.append("session must contain at least one message")
        if self.ended_at < self.started_at:
            violations.append("ended_at precedes started_at")
        prev = None
        for msg in self.messages:
            if not (self.started_at <= msg.timestamp <= self.ended_at):
                violations.append(
                    f"message {msg.message_id} timestamp outside session bounds"
                )
            if prev is not None and msg.timestamp < prev:
                violations.append(
                    f"message {msg.message_id} breaks timestamp monotonicity"
                )
            prev = msg.timestamp
        if violations:
            raise ValidationError(violations)

    def student_messages(self) -> list[Message]:
        return [m for m in self.messages if m.author is Author.STUDENT]


ATTR_ANSWER_SEEKING = "answer_seeking"
ATTR_VERIFICATION = "verification"
VALID_ATTRIBUTES = frozenset({ATTR_ANSWER_SEEKING, ATTR_VERIFICATION})


@dataclass(frozen=True)
class FineType:
    fine_id: str
    category_id: str
    keyword_rules: tuple[str, ...] = ()
    attributes: frozenset[str] = frozenset()


@dataclass(frozen=True)
class TaxonomyConfig:
    """Ordered fine prompt types grouped into ordered high-level categories.

    Exactly one fine type may have no keyword rules: the designated
    fallback that makes classification total.
    """

    categories: tuple[str, ...]
    fine_types: tuple[FineType, ...]
    version: str

    def __post_init__(self):
        violations = []
        if len(set(self.categories)) != len(self.categories):
            violations.append("duplicate category ids")
        seen: set[str] = set()
        ruleless: list[str] = []
        for ft in self.fine_types:
            if ft.fine_id in seen:
                violations.append(f"duplicate fine id: {ft.fine_id}")
            seen.add(ft.fine_id)
            if ft.category_id not in self.categories:
                violations.append(
                    f"fine type {ft.fine_id} references unknown category "
                    f"{ft.category_id}"
                )
            if not ft.keyword_rules:
                ruleless.append(ft.fine_id)
            bad_attrs = set(ft.attributes) - VALID_ATTRIBUTES
            if bad_attrs:
                violations.append(
                    f"fine type {ft.fine_id} has unknown attributes: "
                    f"{sorted(bad_attrs)}"
                )
        if len(ruleless) == 0:
            violations.append("no fallback fine type (one rule-less type required)")
        elif len(ruleless) > 1:
            violations.append(
                f"multiple rule-less fine types, only the fallback may have no "
                f"rules: {ruleless}"
            )
        if violations:
            raise ValidationError(violations)

    @property
    def fallback(self) -> FineType:
        return next(ft for ft in self.fine_types if not ft.keyword_rules)

    def fine_type(self, fine_id: str) -> FineType:
        for ft in self.fine_types:
            if ft.fine_id == fine_id:
                return ft
        raise InvalidLabelError(f"unknown fine type: {fine_id}")


@dataclass(frozen=True)
class PromptLabel:
    message_id: str
    fine_id: str
    category_id: str
    confidence: float
    backend: str  # "heuristic" | "external"


@dataclass(frozen=True)
class CategoryDistribution:
    """Counts per category plus normalized proportions.

    Proportions are an empty map when the total count is zero.
    """

    counts: dict[str, int] = field(default_factory=dict)
    proportions: dict[str, float] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def distribution_of(
    labels: list[PromptLabel], taxonomy: TaxonomyConfig
) -> CategoryDistribution:
    """Count labels per category, zero-filled over every taxonomy category."""
    known = {ft.fine_id: ft.category_id for ft in taxonomy.fine_types}
    counts = {cat: 0 for cat in taxonomy.categories}
    for label in labels:
        cat = known.get(label.fine_id)
        if cat is None or cat != label.category_id:
            raise InvalidLabelError(
                f"label {label.message_id} references {label.fine_id}/"
                f"{label.category_id}, not in taxonomy {taxonomy.version}"
            )
        counts[cat] += 1
    total = sum(counts.values())
    if total == 0:
        return CategoryDistribution(counts=counts, proportions={})
    proportions = {cat: counts[cat] / total for cat in taxonomy.categories}
    return CategoryDistribution(counts=counts, proportions=proportions)


def dominant_category(dist: CategoryDistribution, taxonomy: TaxonomyConfig) -> str:
    """Category with maximal count; ties break by taxonomy category order."""
    best: str | None = None
    best_count = 0
    for cat in taxonomy.categories:
        count = dist.counts.get(cat, 0)
        if count > best_count:
            best = cat
            best_count = count
    if best is None:
        raise NoDominantCategoryError("distribution has no nonzero category")
    return best


# ---------------------------------------------------------------------------
# Canonical serialization: spec field names, stable order, compact JSON.
# ---------------------------------------------------------------------------

def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def message_to_record(msg: Message) -> dict:
    return {
        "message_id": msg.message_id,
        "author": msg.author.value,
        "timestamp": format_ts(msg.timestamp),
        "text": msg.text,
        "redactions": [[s, e, r] for s, e, r in msg.redactions],
        "code_blocks": msg.code_blocks,
        "token_count": msg.token_count,
    }


def message_from_record(rec: dict) -> Message:
    return Message(
        message_id=rec["message_id"],
        author=Author(rec["author"]),
        timestamp=parse_ts(rec["timestamp"]),
        text=rec["text"],
        redactions=tuple((s, e, r) for s, e, r in rec["redactions"]),
        code_blocks=rec["code_blocks"],
        token_count=rec["token_count"],
    )


def session_to_record(session: Session) -> dict:
    return {
        "session_id": session.session_id,
        "student_ref": session.student_ref,
        "course_id": session.course_id,
        "week_tag": session.week_tag,
        "topic_tag": session.topic_tag,
        "messages": [message_to_record(m) for m in session.messages],
        "started_at": format_ts(session.started_at),
        "ended_at": format_ts(session.ended_at),
        "policy": session.policy,
    }


def session_from_record(rec: dict) -> Session:
    return Session(
        session_id=rec["session_id"],
        student_ref=rec["student_ref"],
        course_id=rec["course_id"],
        week_tag=rec.get("week_tag"),
        topic_tag=rec.get("topic_tag"),
        messages=tuple(message_from_record(m) for m in rec["messages"]),
        started_at=parse_ts(rec["started_at"]),
        ended_at=parse_ts(rec["ended_at"]),
        policy=rec.get("policy", "redacted_log"),
    )


def taxonomy_to_record(tax: TaxonomyConfig) -> dict:
    return {
        "categories": list(tax.categories),
        "fine_types": [
            {
                "fine_id": ft.fine_id,
                "category_id": ft.category_id,
                "keyword_rules": list(ft.keyword_rules),
                "attributes": sorted(ft.attributes),
            }
            for ft in tax.fine_types
        ],
        "version": tax.version,
    }


def taxonomy_from_record(rec: dict) -> TaxonomyConfig:
    return TaxonomyConfig(
        categories=tuple(rec["categories"]),
        fine_types=tuple(
            FineType(
                fine_id=ft["fine_id"],
                category_id=ft["category_id"],
                keyword_rules=tuple(ft.get("keyword_rules", ())),
                attributes=frozenset(ft.get("attributes", ())),
            )
            for ft in rec["fine_types"]
        ),
        version=rec["version"],
    )


def label_to_record(label: PromptLabel) -> dict:
    return {
        "message_id": label.message_id,
        "fine_id": label.fine_id,
        "category_id": label.category_id,
        "confidence": label.confidence,
        "backend": label.backend,
    }


def label_from_record(rec: dict) -> PromptLabel:
    return PromptLabel(
        message_id=rec["message_id"],
        fine_id=rec["fine_id"],
        category_id=rec["category_id"],
        confidence=rec["confidence"],
        backend=rec["backend"],
    )


def distribution_to_record(dist: CategoryDistribution) -> dict:
    return {"counts": dict(dist.counts), "proportions": dict(dist.proportions)}


def distribution_from_record(rec: dict) -> CategoryDistribution:
    return CategoryDistribution(
        counts=dict(rec["counts"]), proportions=dict(rec["proportions"])
    )


def to_json_line(record: dict) -> str:
    return _dump(record)
