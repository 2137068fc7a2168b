"""Class-level aggregation over session reports.

Pure functions over immutable reports: overview metrics, student
ranking, topic frequencies, and the weekly usage series. Weekly buckets
conserve the window aggregate (their counts sum to it exactly).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone

from .core import CategoryDistribution, distribution_to_record, format_ts
from .errors import ConfigError
from .reflect import SessionReport

Window = tuple[datetime | None, datetime | None]

RANK_DIMENSIONS = ("sessions", "warn_signals", "answer_seeking_ratio", "prompts")


@dataclass(frozen=True)
class ClassOverview:
    course_id: str
    window: Window
    student_count: int
    session_count: int
    at_risk_students: tuple[tuple[str, tuple[str, ...]], ...]
    aggregate_distribution: CategoryDistribution
    top_topics: tuple[tuple[str, int], ...]
    weekly_series: tuple[tuple[str, CategoryDistribution], ...]


def _in_window(report: SessionReport, window: Window) -> bool:
    start, end = window
    if start is not None and report.started_at < start:
        return False
    if end is not None and report.started_at >= end:
        return False
    return True


def _aggregate(reports: list[SessionReport]) -> CategoryDistribution:
    counts: dict[str, int] = {}
    for report in reports:
        for cat, count in report.distribution.counts.items():
            counts[cat] = counts.get(cat, 0) + count
    total = sum(counts.values())
    if total == 0:
        return CategoryDistribution(counts=counts, proportions={})
    return CategoryDistribution(
        counts=counts, proportions={c: n / total for c, n in counts.items()}
    )


def class_overview(
    reports: list[SessionReport], window: Window = (None, None), top_k: int = 5
) -> ClassOverview:
    """Aggregate one course's reports inside a time window.

    At-risk means at least one warn-severity signal in the window; the
    predicate is intentionally narrow and configurable upstream.
    """
    course_id = reports[0].course_id if reports else ""
    included = [r for r in reports if _in_window(r, window)]

    at_risk: dict[str, set[str]] = {}
    for report in included:
        warn_kinds = {
            r.kind.value for r in report.risks if r.severity.value == "warn"
        }
        if warn_kinds:
            at_risk.setdefault(report.student_ref, set()).update(warn_kinds)

    return ClassOverview(
        course_id=course_id,
        window=window,
        student_count=len({r.student_ref for r in included}),
        session_count=len(included),
        at_risk_students=tuple(
            (student, tuple(sorted(kinds)))
            for student, kinds in sorted(at_risk.items())
        ),
        aggregate_distribution=_aggregate(included),
        top_topics=top_topics(included, top_k) if included else (),
        weekly_series=usage_time_series(included),
    )


def rank_students(
    reports: list[SessionReport], dimension: str
) -> list[tuple[str, float]]:
    """Descending by dimension; ties break by pseudonym order."""
    if dimension not in RANK_DIMENSIONS:
        raise ConfigError(
            f"unknown ranking dimension {dimension!r}, expected one of "
            f"{RANK_DIMENSIONS}"
        )
    per_student: dict[str, list[SessionReport]] = {}
    for report in reports:
        per_student.setdefault(report.student_ref, []).append(report)

    def value(group: list[SessionReport]) -> float:
        if dimension == "sessions":
            return float(len(group))
        if dimension == "warn_signals":
            return float(sum(r.warn_count() for r in group))
        if dimension == "prompts":
            return float(sum(r.student_prompt_count for r in group))
        prompts = sum(r.student_prompt_count for r in group)
        seeking = sum(r.answer_seeking_prompts for r in group)
        return seeking / prompts if prompts else 0.0

    ranked = [(student, value(group)) for student, group in per_student.items()]
    ranked.sort(key=lambda item: (-item[1], item[0]))
    return ranked


def top_topics(reports: list[SessionReport], k: int) -> tuple[tuple[str, int], ...]:
    """Per-session top terms counted across sessions; ties lexicographic."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    counts: dict[str, int] = {}
    for report in reports:
        if report.top_term is not None:
            counts[report.top_term] = counts.get(report.top_term, 0) + 1
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return tuple(ordered[:k])


def _week_label(ts: datetime) -> str:
    year, week, _ = ts.isocalendar()
    return f"{year}-W{week:02d}"


def _week_start(ts: datetime) -> date:
    year, week, _ = ts.isocalendar()
    return date.fromisocalendar(year, week, 1)


def usage_time_series(
    reports: list[SessionReport],
) -> tuple[tuple[str, CategoryDistribution], ...]:
    """ISO-week buckets from first to last active week, gaps zero-filled."""
    if not reports:
        return ()
    categories = list(reports[0].distribution.counts.keys())
    buckets: dict[str, list[SessionReport]] = {}
    for report in reports:
        buckets.setdefault(_week_label(report.started_at), []).append(report)

    first = min(_week_start(r.started_at) for r in reports)
    last = max(_week_start(r.started_at) for r in reports)
    series: list[tuple[str, CategoryDistribution]] = []
    cursor = first
    while cursor <= last:
        label = _week_label(datetime(cursor.year, cursor.month, cursor.day, tzinfo=timezone.utc))
        group = buckets.get(label, [])
        if group:
            series.append((label, _aggregate(group)))
        else:
            series.append(
                (
                    label,
                    CategoryDistribution(
                        counts={c: 0 for c in categories}, proportions={}
                    ),
                )
            )
        cursor += timedelta(days=7)
    return tuple(series)


def overview_to_record(overview: ClassOverview) -> dict:
    start, end = overview.window
    return {
        "course_id": overview.course_id,
        "window": [
            format_ts(start) if start else None,
            format_ts(end) if end else None,
        ],
        "student_count": overview.student_count,
        "session_count": overview.session_count,
        "at_risk_students": [
            [student, list(kinds)] for student, kinds in overview.at_risk_students
        ],
        "aggregate_distribution": distribution_to_record(
            overview.aggregate_distribution
        ),
        "top_topics": [[term, count] for term, count in overview.top_topics],
        "weekly_series": [
            [week, distribution_to_record(dist)]
            for week, dist in overview.weekly_series
        ],
    }
