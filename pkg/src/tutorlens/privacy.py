"""Data filter: redaction, pseudonymization, and per-course logging policies.

Everything here runs BEFORE persistence; under the default policy no raw
identifier or rule-matching text ever reaches the record store. Redaction
spans are reported against the original text so audits can reconstruct
what was removed without storing it.
"""

from __future__ import annotations

import hashlib
import hmac
import re
from dataclasses import dataclass, field
from enum import Enum

from .core import Author, Message, count_code_blocks, format_ts, tokenize
from .errors import ConfigError, InvalidIdError, ValidationError
from .ingest import RawEvent


class LogPolicy(str, Enum):
    FULL_LOG = "full_log"
    REDACTED_LOG = "redacted_log"
    COUNTS_ONLY = "counts_only"


@dataclass(frozen=True)
class RedactionRule:
    rule_id: str
    pattern: str
    replacement: str

    def compiled(self) -> re.Pattern:
        return re.compile(self.pattern, re.IGNORECASE)


DEFAULT_RULES: tuple[RedactionRule, ...] = (
    RedactionRule(
        "email",
        r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}",
        "[EMAIL]",
    ),
    # phone-like runs: 9+ digits, optional separators between them
    RedactionRule(
        "phone",
        r"(?<![0-9])\+?[0-9](?:[ ().-]?[0-9]){8,}(?![0-9])",
        "[PHONE]",
    ),
    # institution id shape, e.g. 1TE23001; override per course in config
    RedactionRule("student_id", r"\b[0-9][A-Z]{2}[0-9]{5}\b", "[ID]"),
    # only URLs carrying query strings (tracking/session params)
    RedactionRule("url_query", r"https?://[^\s]+\?[^\s]+", "[URL]"),
)

NAME_PLACEHOLDER = "[NAME]"


@dataclass(frozen=True)
class RedactionRuleSet:
    """Ordered rules plus roster names and the course logging policy."""

    rules: tuple[RedactionRule, ...] = DEFAULT_RULES
    roster_names: tuple[str, ...] = ()
    policy: LogPolicy = LogPolicy.REDACTED_LOG

    def __post_init__(self):
        # placeholders must never re-match a pattern or redaction would loop
        violations = []
        placeholders = {r.replacement for r in self.rules} | {NAME_PLACEHOLDER}
        for rule in self.rules:
            pat = rule.compiled()
            for token in placeholders:
                if pat.search(token):
                    violations.append(
                        f"rule {rule.rule_id} pattern matches placeholder {token}"
                    )
        if violations:
            raise ValidationError(violations)

    def roster_rules(self) -> list[RedactionRule]:
        return [
            RedactionRule(
                f"roster_name:{name}", r"\b" + re.escape(name) + r"\b", NAME_PLACEHOLDER
            )
            for name in self.roster_names
        ]


def redact_text(
    text: str, rules: RedactionRuleSet, include_roster: bool = False
) -> tuple[str, list[tuple[int, int, str]]]:
    """Replace every rule match with its placeholder.

    Returns the redacted text and (start, end, rule_id) spans over the
    original. Rules are applied in listed order; an earlier rule claims
    overlapping regions. Idempotent because placeholders match no rule.
    """
    active = list(rules.rules)
    if include_roster:
        active.extend(rules.roster_rules())

    claimed: list[tuple[int, int, str, str]] = []  # start, end, rule_id, repl

    def overlaps(start: int, end: int) -> bool:
        return any(s < end and start < e for s, e, _, _ in claimed)

    for rule in active:
        for match in rule.compiled().finditer(text):
            if not overlaps(match.start(), match.end()):
                claimed.append(
                    (match.start(), match.end(), rule.rule_id, rule.replacement)
                )
    claimed.sort(key=lambda span: span[0])

    parts: list[str] = []
    cursor = 0
    spans: list[tuple[int, int, str]] = []
    for start, end, rule_id, replacement in claimed:
        parts.append(text[cursor:start])
        parts.append(replacement)
        spans.append((start, end, rule_id))
        cursor = end
    parts.append(text[cursor:])
    return "".join(parts), spans


@dataclass
class PseudonymMap:
    """Keyed one-way mapping raw id -> stable pseudonym.

    The forward direction needs no lookup (restart-safe); ``entries`` is the
    admin-only reverse record of what was seen, never shipped to dashboards.
    """

    course_salt: bytes
    entries: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.course_salt:
            raise ConfigError("course_salt must be set before pseudonymizing")


def pseudonymize_id(raw_id: str, pmap: PseudonymMap) -> str:
    """Derive ``stu-`` + 8 hex chars of an HMAC over the raw id."""
    if not raw_id:
        raise InvalidIdError("raw_id is empty")
    digest = hmac.new(pmap.course_salt, raw_id.encode("utf-8"), hashlib.sha256)
    pseudonym = "stu-" + digest.hexdigest()[:8]
    pmap.entries[raw_id] = pseudonym
    return pseudonym


def mint_message_id(
    pseudonym: str, timestamp_iso: str, author: str, text: str, seq: int
) -> str:
    basis = f"{pseudonym}|{timestamp_iso}|{author}|{seq}|{text}"
    return "msg-" + hashlib.sha256(basis.encode("utf-8")).hexdigest()[:12]


def filter_event(
    event: RawEvent, rules: RedactionRuleSet, pmap: PseudonymMap, seq: int = 0
) -> tuple[Message, str]:
    """Filter one raw event into a (Message, pseudonym) pair.

    full_log redacts per rules; redacted_log additionally masks roster
    names; counts_only drops the text entirely, keeping author, timestamp,
    code block count and token count.
    """
    pseudonym = pseudonymize_id(event.student_id_raw, pmap)
    include_roster = rules.policy is not LogPolicy.FULL_LOG
    redacted, spans = redact_text(event.text_raw, rules, include_roster=include_roster)
    code_blocks = count_code_blocks(redacted)
    token_count = len(tokenize(redacted))

    if rules.policy is LogPolicy.COUNTS_ONLY:
        text = ""
        spans = []
    else:
        text = redacted

    message = Message(
        message_id=mint_message_id(
            pseudonym, format_ts(event.timestamp), event.author.value, redacted, seq
        ),
        author=Author(event.author),
        timestamp=event.timestamp,
        text=text,
        redactions=tuple(spans),
        code_blocks=code_blocks,
        token_count=token_count,
    )
    return message, pseudonym


def load_ruleset(record: dict) -> RedactionRuleSet:
    """Build a rule set from a parsed config record (versioned file)."""
    try:
        rules = tuple(
            RedactionRule(r["rule_id"], r["pattern"], r["replacement"])
            for r in record.get("rules", [])
        ) or DEFAULT_RULES
        return RedactionRuleSet(
            rules=rules,
            roster_names=tuple(record.get("roster_names", ())),
            policy=LogPolicy(record.get("policy", "redacted_log")),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid redaction rule set: {exc}") from exc
