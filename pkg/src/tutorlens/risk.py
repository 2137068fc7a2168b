"""Lightweight risk signal detectors and follow-up suggestions.

Every output is an indicator, never a verdict: severity tops out at
"warn", rationales are phrased as patterns, and each signal carries a
snapshot of the thresholds that produced it so it can be reproduced
bit-for-bit from the same session.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from enum import Enum

from .core import Author, PromptLabel, Session, TaxonomyConfig, tokenize
from .core import ATTR_ANSWER_SEEKING, ATTR_VERIFICATION
from .errors import ConfigError


class RiskKind(str, Enum):
    ANSWER_OVERRELIANCE = "answer_overreliance"
    COPY_PASTE = "copy_paste"
    LACK_OF_VERIFICATION = "lack_of_verification"
    REPEATED_MISCONCEPTION = "repeated_misconception"


class Severity(str, Enum):
    INFO = "info"
    WARN = "warn"


@dataclass(frozen=True)
class RiskThresholds:
    """Operating points for all detectors; defaults are config-level choices."""

    ngram_n: int = 8
    copy_min_tokens: int = 20
    copy_overlap_info: float = 0.6
    copy_overlap_warn: float = 0.8
    overreliance_min_prompts: int = 3
    overreliance_ratio_info: float = 0.5
    overreliance_ratio_warn: float = 0.75
    misconception_repeat_k: int = 3

    @classmethod
    def from_record(cls, record: dict) -> "RiskThresholds":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(record) - known
        if unknown:
            raise ConfigError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**record)


@dataclass(frozen=True)
class RiskSignal:
    kind: RiskKind
    severity: Severity
    evidence: tuple[tuple[str, tuple[int, int] | None], ...]
    rationale: str
    thresholds: dict
    follow_up: str

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("risk signal requires evidence references")


@dataclass(frozen=True)
class NotComputable:
    """Marker for detectors that cannot run under the session's policy.

    Distinct from "no risk": absence of text is not absence of risk.
    """

    kind: RiskKind
    reason: str


DetectorResult = RiskSignal | NotComputable | None


FOLLOW_UP_TEMPLATES: dict[RiskKind, str] = {
    RiskKind.ANSWER_OVERRELIANCE: (
        "Consider prompting this student to explain the returned solution "
        "in their own words."
    ),
    RiskKind.COPY_PASTE: (
        "Consider asking the student to walk through the reused answer and "
        "verify it against their own test cases."
    ),
    RiskKind.LACK_OF_VERIFICATION: (
        "Consider encouraging the student to run the provided code and "
        "report what the output shows."
    ),
    RiskKind.REPEATED_MISCONCEPTION: (
        "Consider revisiting '{term}' with this student; the same difficulty "
        "has come up in several sessions."
    ),
}


def suggest_follow_up(
    signal: RiskSignal, templates: dict[RiskKind, str] | None = None
) -> str:
    """Deterministic per-kind suggestion; never names a penalty."""
    if templates is None and signal.follow_up:
        return signal.follow_up
    lookup = templates or FOLLOW_UP_TEMPLATES
    if signal.kind not in lookup:
        raise ConfigError(f"no follow-up template for kind {signal.kind}")
    return lookup[signal.kind]


def ngram_overlap(a: list[str], b: list[str], n: int) -> float:
    """Fraction of a's distinct n-grams that also occur in b.

    Returns 0.0 when a has fewer than n tokens.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(a) < n:
        return 0.0
    grams_a = {tuple(a[i : i + n]) for i in range(len(a) - n + 1)}
    grams_b = {tuple(b[i : i + n]) for i in range(len(b) - n + 1)}
    return len(grams_a & grams_b) / max(1, len(grams_a))


def _copy_snapshot(t: RiskThresholds) -> dict:
    return {
        "ngram_n": t.ngram_n,
        "copy_min_tokens": t.copy_min_tokens,
        "copy_overlap_info": t.copy_overlap_info,
        "copy_overlap_warn": t.copy_overlap_warn,
    }


def detect_copy_paste(
    session: Session, thresholds: RiskThresholds | None = None
) -> DetectorResult:
    """Flag student prompts that re-paste an earlier assistant message.

    A prompt of >= copy_min_tokens tokens whose n-gram overlap with any
    earlier assistant message reaches copy_overlap_info triggers the
    signal; copy_overlap_warn escalates severity.
    """
    t = thresholds or RiskThresholds()
    if session.policy == "counts_only":
        return NotComputable(
            RiskKind.COPY_PASTE, "session stored under counts_only policy"
        )

    best: tuple[float, str, str] | None = None  # overlap, student id, assistant id
    earlier_assistant: list[tuple[str, list[str]]] = []
    for message in session.messages:
        if message.author is Author.ASSISTANT:
            earlier_assistant.append((message.message_id, tokenize(message.text)))
            continue
        prompt_tokens = tokenize(message.text)
        if len(prompt_tokens) < t.copy_min_tokens:
            continue
        for assistant_id, assistant_tokens in earlier_assistant:
            overlap = ngram_overlap(prompt_tokens, assistant_tokens, t.ngram_n)
            if overlap >= t.copy_overlap_info and (best is None or overlap > best[0]):
                best = (overlap, message.message_id, assistant_id)

    if best is None:
        return None
    overlap, student_id, assistant_id = best
    severity = Severity.WARN if overlap >= t.copy_overlap_warn else Severity.INFO
    return RiskSignal(
        kind=RiskKind.COPY_PASTE,
        severity=severity,
        evidence=((student_id, None), (assistant_id, None)),
        rationale=(
            f"Pattern consistent with re-pasting an assistant answer: "
            f"{overlap:.2f} of the prompt's {t.ngram_n}-grams also appear in an "
            f"earlier assistant message."
        ),
        thresholds=_copy_snapshot(t),
        follow_up=FOLLOW_UP_TEMPLATES[RiskKind.COPY_PASTE],
    )


def detect_answer_overreliance(
    labels: list[PromptLabel],
    taxonomy: TaxonomyConfig,
    thresholds: RiskThresholds | None = None,
) -> DetectorResult:
    """Flag sessions dominated by answer-seeking prompt types."""
    t = thresholds or RiskThresholds()
    if len(labels) < t.overreliance_min_prompts:
        return None
    seeking = [
        label
        for label in labels
        if ATTR_ANSWER_SEEKING in taxonomy.fine_type(label.fine_id).attributes
    ]
    ratio = len(seeking) / len(labels)
    if ratio < t.overreliance_ratio_info:
        return None
    severity = (
        Severity.WARN if ratio >= t.overreliance_ratio_warn else Severity.INFO
    )
    return RiskSignal(
        kind=RiskKind.ANSWER_OVERRELIANCE,
        severity=severity,
        evidence=tuple((label.message_id, None) for label in seeking),
        rationale=(
            f"Pattern consistent with overreliance on direct answers: "
            f"{len(seeking)} of {len(labels)} prompts were answer-seeking."
        ),
        thresholds={
            "overreliance_min_prompts": t.overreliance_min_prompts,
            "overreliance_ratio_info": t.overreliance_ratio_info,
            "overreliance_ratio_warn": t.overreliance_ratio_warn,
        },
        follow_up=FOLLOW_UP_TEMPLATES[RiskKind.ANSWER_OVERRELIANCE],
    )


_EXECUTION_EVIDENCE = frozenset({"ran", "tested", "output", "error"})


def detect_lack_of_verification(
    session: Session,
    labels: list[PromptLabel],
    taxonomy: TaxonomyConfig,
    thresholds: RiskThresholds | None = None,
) -> DetectorResult:
    """Flag assistant-provided code that no later student message verifies.

    Verification means a later student prompt labeled with a
    verification-attribute fine type, or one mentioning execution
    evidence (ran/tested/output/error).
    """
    if session.policy == "counts_only":
        return NotComputable(
            RiskKind.LACK_OF_VERIFICATION, "session stored under counts_only policy"
        )

    last_code_idx: int | None = None
    for idx, message in enumerate(session.messages):
        if message.author is Author.ASSISTANT and message.code_blocks >= 1:
            last_code_idx = idx
    if last_code_idx is None:
        return None

    label_by_msg = {label.message_id: label for label in labels}
    for message in session.messages[last_code_idx + 1 :]:
        if message.author is not Author.STUDENT:
            continue
        label = label_by_msg.get(message.message_id)
        if (
            label is not None
            and ATTR_VERIFICATION in taxonomy.fine_type(label.fine_id).attributes
        ):
            return None
        if set(tokenize(message.text)) & _EXECUTION_EVIDENCE:
            return None

    code_message = session.messages[last_code_idx]
    return RiskSignal(
        kind=RiskKind.LACK_OF_VERIFICATION,
        severity=Severity.INFO,
        evidence=((code_message.message_id, None),),
        rationale=(
            "Pattern consistent with unverified assistant code: the last "
            "code-bearing reply has no later student message reporting a run "
            "or check."
        ),
        thresholds={"execution_evidence": sorted(_EXECUTION_EVIDENCE)},
        follow_up=FOLLOW_UP_TEMPLATES[RiskKind.LACK_OF_VERIFICATION],
    )


_STOPWORDS = frozenset(
    """a about after again all also am an and any are as at be because been
    but by can could did do does doing down for from get got had has have
    here how i if in into is it its just like me more most my need no not
    now of on one only or other our out over own please same should so some
    such than that the their them then there these they this to too under
    up use using very was we were what when where which while who why will
    with would you your code question help""".split()
)


def top_topic_term(session: Session) -> str | None:
    """Most frequent non-stopword token across a session's student prompts.

    Frequency ties break lexicographically; None when nothing qualifies
    (e.g. counts_only sessions).
    """
    counter: Counter[str] = Counter()
    for message in session.student_messages():
        for token in tokenize(message.text):
            if token not in _STOPWORDS and not token.isdigit():
                counter[token] += 1
    if not counter:
        return None
    return min(counter, key=lambda tok: (-counter[tok], tok))


def detect_repeated_misconception(
    sessions: list[tuple[Session, list[PromptLabel]]],
    student_ref: str,
    thresholds: RiskThresholds | None = None,
) -> DetectorResult:
    """Flag a (fine type, topic term) pair recurring across sessions.

    All sessions must belong to ``student_ref``; the signal lists one
    anchoring student message per involved session.
    """
    t = thresholds or RiskThresholds()
    for session, _labels in sessions:
        if session.student_ref != student_ref:
            raise ValueError(
                f"session {session.session_id} does not belong to {student_ref}"
            )

    occurrences: dict[tuple[str, str], list[Session]] = {}
    for session, labels in sessions:
        term = top_topic_term(session)
        if term is None:
            continue
        for fine_id in sorted({label.fine_id for label in labels}):
            occurrences.setdefault((fine_id, term), []).append(session)

    qualifying = {
        pair: group
        for pair, group in occurrences.items()
        if len({s.session_id for s in group}) >= t.misconception_repeat_k
    }
    if not qualifying:
        return None
    fine_id, term = min(
        qualifying, key=lambda pair: (-len(qualifying[pair]), pair)
    )
    group = qualifying[(fine_id, term)]

    evidence = []
    for session in group:
        students = session.student_messages()
        anchor = students[0] if students else session.messages[0]
        evidence.append((anchor.message_id, None))
    return RiskSignal(
        kind=RiskKind.REPEATED_MISCONCEPTION,
        severity=Severity.INFO,
        evidence=tuple(evidence),
        rationale=(
            f"Pattern consistent with a recurring difficulty: "
            f"'{fine_id.replace('_', ' ')}' prompts about '{term}' appeared in "
            f"{len(group)} separate sessions."
        ),
        thresholds={"misconception_repeat_k": t.misconception_repeat_k},
        follow_up=FOLLOW_UP_TEMPLATES[RiskKind.REPEATED_MISCONCEPTION].format(
            term=term
        ),
    )


def signal_to_record(signal: RiskSignal) -> dict:
    return {
        "kind": signal.kind.value,
        "severity": signal.severity.value,
        "evidence": [
            [mid, list(span) if span is not None else None]
            for mid, span in signal.evidence
        ],
        "rationale": signal.rationale,
        "thresholds": signal.thresholds,
        "follow_up": signal.follow_up,
    }


def signal_from_record(rec: dict) -> RiskSignal:
    return RiskSignal(
        kind=RiskKind(rec["kind"]),
        severity=Severity(rec["severity"]),
        evidence=tuple(
            (mid, tuple(span) if span is not None else None)
            for mid, span in rec["evidence"]
        ),
        rationale=rec["rationale"],
        thresholds=rec["thresholds"],
        follow_up=rec["follow_up"],
    )


def load_follow_up_templates(record: dict) -> dict[RiskKind, str]:
    """Parse a follow-up template file keyed by risk kind."""
    templates = dict(FOLLOW_UP_TEMPLATES)
    for key, value in record.items():
        try:
            templates[RiskKind(key)] = str(value)
        except ValueError as exc:
            raise ConfigError(f"unknown risk kind in template file: {key}") from exc
    return templates
