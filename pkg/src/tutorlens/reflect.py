"""Session report builder: labels + distribution + risks + narrative summary.

The template generator is the default and is fully deterministic; an
external LLM generator can be plugged in behind the same contract, falls
back to the template on any failure, and its output passes through the
privacy rule set before it can reach a report.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Protocol

from .classify import ClassifierBackend, classify_session
from .core import (
    ATTR_ANSWER_SEEKING,
    CategoryDistribution,
    PromptLabel,
    Session,
    TaxonomyConfig,
    distribution_from_record,
    distribution_of,
    distribution_to_record,
    dominant_category,
    format_ts,
    label_from_record,
    label_to_record,
    parse_ts,
)
from .errors import NoDominantCategoryError
from .privacy import RedactionRuleSet, redact_text
from .risk import (
    NotComputable,
    RiskSignal,
    RiskThresholds,
    detect_answer_overreliance,
    detect_copy_paste,
    detect_lack_of_verification,
    signal_from_record,
    signal_to_record,
    top_topic_term,
)

logger = logging.getLogger(__name__)

INTENT_PHRASES = {
    "planning": "was forming an approach",
    "monitoring": "was troubleshooting",
    "optimization": "was refining a solution",
    "other": "was asking questions outside the course taxonomy",
}


@dataclass(frozen=True)
class SessionReport:
    report_id: str
    session_id: str
    student_ref: str
    course_id: str
    week_tag: str | None
    topic_tag: str | None
    started_at: datetime
    ended_at: datetime
    message_count: int
    student_prompt_count: int
    answer_seeking_prompts: int
    top_term: str | None
    distribution: CategoryDistribution
    labels: tuple[PromptLabel, ...]
    risks: tuple[RiskSignal, ...]
    not_computable: tuple[str, ...]
    summary: str
    generator: str  # "template" | "external"
    taxonomy_version: str
    created_at: datetime

    def warn_count(self) -> int:
        return sum(1 for r in self.risks if r.severity.value == "warn")


class ExternalSummaryGenerator(Protocol):
    def generate(
        self,
        session: Session,
        labels: list[PromptLabel],
        dist: CategoryDistribution,
        risks: list[RiskSignal],
    ) -> str: ...


@dataclass
class ReportBackends:
    """Everything build_session_report needs beyond the session itself."""

    classifier: ClassifierBackend = field(default_factory=ClassifierBackend)
    thresholds: RiskThresholds = field(default_factory=RiskThresholds)
    summary_generator: ExternalSummaryGenerator | None = None
    ruleset: RedactionRuleSet = field(default_factory=RedactionRuleSet)


def _humanize(fine_id: str) -> str:
    return fine_id.replace("_", " ")


def generate_summary(
    session: Session,
    labels: list[PromptLabel],
    dist: CategoryDistribution,
    risks: list[RiskSignal],
    taxonomy: TaxonomyConfig,
) -> str:
    """Three-sentence template: intent, difficulties, progression.

    A fourth sentence is appended when risks were detected. No message
    text is ever quoted; only taxonomy names and risk kinds appear.
    """
    if not labels:
        return (
            "The student sent no classifiable prompts in this session. "
            f"It contains {len(session.messages)} messages in total."
        )

    try:
        dominant = dominant_category(dist, taxonomy)
    except NoDominantCategoryError:
        dominant = taxonomy.fallback.category_id
    intent = INTENT_PHRASES.get(dominant, f"focused on {dominant} questions")
    sentences = [
        f"Across {len(labels)} prompts, the student {intent}."
    ]

    fine_counts: dict[str, int] = {}
    for label in labels:
        fine_counts[label.fine_id] = fine_counts.get(label.fine_id, 0) + 1
    order = {ft.fine_id: idx for idx, ft in enumerate(taxonomy.fine_types)}
    top = sorted(fine_counts, key=lambda fid: (-fine_counts[fid], order[fid]))[:2]
    if len(top) == 1:
        sentences.append(f"The main difficulty centered on {_humanize(top[0])}.")
    else:
        sentences.append(
            f"The main difficulties centered on {_humanize(top[0])} and "
            f"{_humanize(top[1])}."
        )

    first_cat, last_cat = labels[0].category_id, labels[-1].category_id
    if first_cat == last_cat:
        sentences.append(f"The interaction remained in {first_cat} throughout.")
    else:
        sentences.append(
            f"The interaction moved from {first_cat} into {last_cat}."
        )

    if risks:
        kinds = ", ".join(
            f"{r.kind.value.replace('_', ' ')} ({r.severity.value})" for r in risks
        )
        sentences.append(f"Detected patterns worth a look: {kinds}.")
    return " ".join(sentences)


def _iso_week(ts: datetime) -> str:
    year, week, _ = ts.isocalendar()
    return f"{year}-W{week:02d}"


def build_session_report(
    session: Session,
    taxonomy: TaxonomyConfig,
    backends: ReportBackends | None = None,
) -> SessionReport:
    """Run the full per-session pipeline and freeze the result.

    Deterministic with the heuristic classifier and template generator:
    created_at is the session end instant and the report id is a content
    hash, so rebuilding an unchanged session is byte-identical.
    """
    backends = backends or ReportBackends()
    labels = classify_session(session, taxonomy, backends.classifier)
    dist = distribution_of(labels, taxonomy)

    risks: list[RiskSignal] = []
    not_computable: list[str] = []
    results = [
        detect_copy_paste(session, backends.thresholds),
        detect_lack_of_verification(session, labels, taxonomy, backends.thresholds),
    ]
    if session.policy == "counts_only":
        not_computable.append("answer_overreliance")
    else:
        results.append(
            detect_answer_overreliance(labels, taxonomy, backends.thresholds)
        )
    for result in results:
        if isinstance(result, RiskSignal):
            risks.append(result)
        elif isinstance(result, NotComputable):
            not_computable.append(result.kind.value)
    risks.sort(key=lambda r: r.kind.value)

    generator = "template"
    summary = generate_summary(session, labels, dist, risks, taxonomy)
    if backends.summary_generator is not None:
        try:
            raw = backends.summary_generator.generate(session, labels, dist, risks)
            filtered, _spans = redact_text(raw, backends.ruleset, include_roster=True)
            if filtered.strip():
                summary = filtered
                generator = "external"
        except Exception as exc:
            logger.warning("external summary generator failed, using template: %s", exc)

    seeking = sum(
        1
        for label in labels
        if ATTR_ANSWER_SEEKING in taxonomy.fine_type(label.fine_id).attributes
    )

    body = {
        "session_id": session.session_id,
        "student_ref": session.student_ref,
        "course_id": session.course_id,
        "week_tag": session.week_tag or _iso_week(session.started_at),
        "topic_tag": session.topic_tag,
        "started_at": format_ts(session.started_at),
        "ended_at": format_ts(session.ended_at),
        "message_count": len(session.messages),
        "student_prompt_count": len(session.student_messages()),
        "answer_seeking_prompts": seeking,
        "top_term": top_topic_term(session),
        "distribution": distribution_to_record(dist),
        "labels": [label_to_record(label) for label in labels],
        "risks": [signal_to_record(risk) for risk in risks],
        "not_computable": sorted(not_computable),
        "summary": summary,
        "generator": generator,
        "taxonomy_version": taxonomy.version,
        "created_at": format_ts(session.ended_at),
    }
    digest = hashlib.sha256(
        json.dumps(body, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
    return report_from_record({"report_id": f"rpt-{digest[:16]}", **body})


def report_to_record(report: SessionReport) -> dict:
    return {
        "report_id": report.report_id,
        "session_id": report.session_id,
        "student_ref": report.student_ref,
        "course_id": report.course_id,
        "week_tag": report.week_tag,
        "topic_tag": report.topic_tag,
        "started_at": format_ts(report.started_at),
        "ended_at": format_ts(report.ended_at),
        "message_count": report.message_count,
        "student_prompt_count": report.student_prompt_count,
        "answer_seeking_prompts": report.answer_seeking_prompts,
        "top_term": report.top_term,
        "distribution": distribution_to_record(report.distribution),
        "labels": [label_to_record(label) for label in report.labels],
        "risks": [signal_to_record(risk) for risk in report.risks],
        "not_computable": list(report.not_computable),
        "summary": report.summary,
        "generator": report.generator,
        "taxonomy_version": report.taxonomy_version,
        "created_at": format_ts(report.created_at),
    }


def report_from_record(rec: dict) -> SessionReport:
    return SessionReport(
        report_id=rec["report_id"],
        session_id=rec["session_id"],
        student_ref=rec["student_ref"],
        course_id=rec["course_id"],
        week_tag=rec.get("week_tag"),
        topic_tag=rec.get("topic_tag"),
        started_at=parse_ts(rec["started_at"]),
        ended_at=parse_ts(rec["ended_at"]),
        message_count=rec["message_count"],
        student_prompt_count=rec["student_prompt_count"],
        answer_seeking_prompts=rec["answer_seeking_prompts"],
        top_term=rec.get("top_term"),
        distribution=distribution_from_record(rec["distribution"]),
        labels=tuple(label_from_record(l) for l in rec["labels"]),
        risks=tuple(signal_from_record(r) for r in rec["risks"]),
        not_computable=tuple(rec.get("not_computable", ())),
        summary=rec["summary"],
        generator=rec["generator"],
        taxonomy_version=rec["taxonomy_version"],
        created_at=parse_ts(rec["created_at"]),
    )
