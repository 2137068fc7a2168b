"""HTTP API: signed launch, role-based dashboard endpoints, the tutor
relay, and the consent- and audit-gated evidence workflow.

The launch protocol is a deliberately simplified LTI-style signed
payload (HMAC over the claim set with the course's shared key), isolated
behind one verification function. Evidence access never returns full
transcripts: only the redacted text of messages referenced by a
session's risk signals, and only under an unexpired grant.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import logging
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Protocol

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from pydantic import BaseModel

from .analytics import class_overview, overview_to_record, rank_students
from .classify import ClassifierBackend, DEFAULT_TAXONOMY
from .config import AppConfig
from .core import Author, Session, TaxonomyConfig, format_ts
from .errors import ForbiddenError, NotFoundError
from .ingest import RawEvent
from .privacy import PseudonymMap, filter_event, pseudonymize_id
from .reflect import ReportBackends, SessionReport, build_session_report, report_to_record
from .risk import RiskSignal, detect_repeated_misconception, signal_to_record
from .store import AuditAction, RecordStore, SharingLevel, audit_to_record

logger = logging.getLogger(__name__)

CANNED_APOLOGY = (
    "Sorry, the tutor is unavailable right now. Your message was saved; "
    "please try again in a moment."
)


# ---------------------------------------------------------------------------
# Signed launch + bearer tokens
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Principal:
    subject: str
    role: str  # student | instructor | admin
    course_id: str
    pseudonym: str | None
    expires: datetime


def _canonical_claims(claims: dict) -> bytes:
    return json.dumps(claims, sort_keys=True, separators=(",", ":")).encode("utf-8")


def sign_launch(claims: dict, course_key: str) -> str:
    return hmac.new(
        course_key.encode("utf-8"), _canonical_claims(claims), hashlib.sha256
    ).hexdigest()


def mint_token(claims: dict, secret: str) -> str:
    body = base64.urlsafe_b64encode(_canonical_claims(claims)).decode("ascii")
    sig = hmac.new(secret.encode("utf-8"), body.encode("ascii"), hashlib.sha256)
    return f"{body}.{sig.hexdigest()}"


def verify_token(token: str, secret: str, now: datetime) -> dict:
    try:
        body, sig = token.split(".", 1)
        expected = hmac.new(
            secret.encode("utf-8"), body.encode("ascii"), hashlib.sha256
        ).hexdigest()
        if not hmac.compare_digest(sig, expected):
            raise ValueError("bad signature")
        claims = json.loads(base64.urlsafe_b64decode(body.encode("ascii")))
    except (ValueError, json.JSONDecodeError) as exc:
        raise ForbiddenError(f"invalid token: {exc}") from exc
    if claims.get("exp", 0) <= now.timestamp():
        raise ForbiddenError("token expired")
    return claims


# ---------------------------------------------------------------------------
# Pluggable tutor backend
# ---------------------------------------------------------------------------

class AssistantBackend(Protocol):
    def reply(self, course_id: str, student_ref: str, text: str) -> str: ...


class ScriptedAssistant:
    """Deterministic test/dev backend cycling through canned hints."""

    DEFAULT_SCRIPT = (
        "Let's take that step by step. What have you tried so far?",
        "Here is a hint: check how your loop indexes relate to the list length.",
        "Try breaking the problem into a smaller input and tracing it by hand.",
    )

    def __init__(self, script: tuple[str, ...] | None = None):
        self.script = script or self.DEFAULT_SCRIPT
        self._turns: dict[str, int] = {}

    def reply(self, course_id: str, student_ref: str, text: str) -> str:
        key = f"{course_id}:{student_ref}"
        idx = self._turns.get(key, 0)
        self._turns[key] = idx + 1
        return self.script[idx % len(self.script)]


@dataclass(frozen=True)
class EvidenceGrant:
    grant_id: str
    session_id: str
    instructor_id: str
    reason: str
    granted_at: datetime
    expires_at: datetime
    scope: str = "risk_evidence_spans"

    def to_record(self) -> dict:
        return {
            "grant_id": self.grant_id,
            "session_id": self.session_id,
            "instructor_id": self.instructor_id,
            "reason": self.reason,
            "granted_at": format_ts(self.granted_at),
            "expires_at": format_ts(self.expires_at),
            "scope": self.scope,
        }


@dataclass
class ServiceState:
    """Everything the endpoints share; built once per process."""

    config: AppConfig
    store: RecordStore
    taxonomy: TaxonomyConfig = DEFAULT_TAXONOMY
    assistant: AssistantBackend = field(default_factory=ScriptedAssistant)
    classifier: ClassifierBackend = field(default_factory=ClassifierBackend)
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)
    grants: dict[str, EvidenceGrant] = field(default_factory=dict)
    _event_seq: int = 0

    def __post_init__(self):
        self.pmap = PseudonymMap(course_salt=self.config.course_salt)
        self.backends = ReportBackends(
            classifier=self.classifier,
            thresholds=self.config.thresholds,
            ruleset=self.config.ruleset,
        )

    def next_seq(self) -> int:
        self._event_seq += 1
        return self._event_seq


# ---------------------------------------------------------------------------
# Request bodies
# ---------------------------------------------------------------------------

class LaunchRequest(BaseModel):
    claims: dict
    signature: str


class ChatRequest(BaseModel):
    text: str


class EvidenceRequest(BaseModel):
    reason: str


class SharingRequest(BaseModel):
    level: str


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="tutorlens", version="0.1.0")

    def principal_of(request: Request) -> Principal:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise HTTPException(401, "missing bearer token")
        try:
            claims = verify_token(
                header[7:].strip(), state.config.token_secret, state.clock()
            )
        except ForbiddenError as exc:
            raise HTTPException(401, str(exc))
        return Principal(
            subject=claims["sub"],
            role=claims["role"],
            course_id=claims["course"],
            pseudonym=claims.get("pseudonym"),
            expires=datetime.fromtimestamp(claims["exp"], tz=timezone.utc),
        )

    def require_course_staff(principal: Principal, course_id: str) -> None:
        if principal.role not in ("instructor", "admin"):
            raise HTTPException(403, "instructor or admin role required")
        if principal.role == "instructor" and principal.course_id != course_id:
            raise HTTPException(403, "wrong course scope")

    def course_reports(course_id: str) -> list[SessionReport]:
        """Persisted reports overlaid with fresh reports for live sessions."""
        merged: dict[str, SessionReport] = {
            r.session_id: r for r in state.store.reports(course_id)
        }
        for session in state.store.live_sessions(
            course_id, state.config.idle_gap, state.config.ruleset.policy.value
        ):
            merged[session.session_id] = build_session_report(
                session, state.taxonomy, state.backends
            )
        return [merged[sid] for sid in sorted(merged)]

    # -- launch ------------------------------------------------------------

    @app.post("/lti/launch")
    def lti_launch(body: LaunchRequest):
        claims = body.claims
        course_id = claims.get("course")
        if course_id not in state.config.course_keys:
            raise HTTPException(404, "unknown course")
        expected = sign_launch(claims, state.config.course_keys[course_id])
        if not hmac.compare_digest(expected, body.signature):
            raise HTTPException(401, "bad launch signature")
        now = state.clock()
        try:
            expiry = float(claims["expiry"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(401, "missing or invalid expiry claim")
        if expiry <= now.timestamp():
            raise HTTPException(401, "launch payload expired")
        role = claims.get("role")
        if role not in ("student", "instructor", "admin"):
            raise HTTPException(401, "unknown role")

        token_claims = {
            "sub": claims["subject"],
            "role": role,
            "course": course_id,
            "exp": now.timestamp() + state.config.token_ttl.total_seconds(),
        }
        if role == "student":
            token_claims["pseudonym"] = pseudonymize_id(claims["subject"], state.pmap)
        return {
            "token": mint_token(token_claims, state.config.token_secret),
            "role": role,
            "expires_at": format_ts(
                datetime.fromtimestamp(token_claims["exp"], tz=timezone.utc)
            ),
        }

    # -- tutor relay ---------------------------------------------------------

    @app.post("/chat")
    def chat_relay(body: ChatRequest, principal: Principal = Depends(principal_of)):
        if principal.role != "student":
            raise HTTPException(403, "chat relay is student-only")
        now = state.clock()
        event = RawEvent(
            student_id_raw=principal.subject,
            author=Author.STUDENT,
            timestamp=now,
            text_raw=body.text,
            course_id=principal.course_id,
        )
        message, pseudonym = filter_event(
            event, state.config.ruleset, state.pmap, seq=state.next_seq()
        )
        state.store.append_event(principal.course_id, pseudonym, message)

        try:
            raw_reply = state.assistant.reply(
                principal.course_id, pseudonym, message.text
            )
        except Exception as exc:
            logger.warning("assistant backend failed: %s", exc)
            raw_reply = CANNED_APOLOGY
        reply_event = RawEvent(
            student_id_raw=principal.subject,
            author=Author.ASSISTANT,
            timestamp=state.clock(),
            text_raw=raw_reply,
            course_id=principal.course_id,
        )
        reply_message, _ = filter_event(
            reply_event, state.config.ruleset, state.pmap, seq=state.next_seq()
        )
        state.store.append_event(principal.course_id, pseudonym, reply_message)

        sessions = state.store.live_sessions(
            principal.course_id, state.config.idle_gap,
            state.config.ruleset.policy.value,
        )
        current = next(
            (
                s.session_id
                for s in reversed(sessions)
                if s.student_ref == pseudonym
            ),
            None,
        )
        return {"reply": reply_message.text, "session_id": current}

    # -- dashboards ----------------------------------------------------------

    @app.get("/courses/{course_id}/overview")
    def get_overview(
        course_id: str,
        week: str | None = Query(default=None),
        topic: str | None = Query(default=None),
        principal: Principal = Depends(principal_of),
    ):
        require_course_staff(principal, course_id)
        reports = course_reports(course_id)
        if week is not None:
            reports = [r for r in reports if r.week_tag == week]
        if topic is not None:
            reports = [r for r in reports if r.topic_tag == topic]
        overview = class_overview(reports)
        record = overview_to_record(overview)
        record["course_id"] = course_id
        return record

    @app.get("/courses/{course_id}/students")
    def get_roster(
        course_id: str,
        sort: str = Query(default="sessions"),
        principal: Principal = Depends(principal_of),
    ):
        require_course_staff(principal, course_id)
        reports = course_reports(course_id)
        try:
            ranked = rank_students(reports, sort)
        except Exception as exc:
            raise HTTPException(400, str(exc))
        by_student: dict[str, list[SessionReport]] = {}
        for report in reports:
            by_student.setdefault(report.student_ref, []).append(report)
        rows = []
        for student_ref, _value in ranked:
            group = by_student[student_ref]
            prompts = sum(r.student_prompt_count for r in group)
            seeking = sum(r.answer_seeking_prompts for r in group)
            kinds = sorted(
                {
                    r.kind.value
                    for rep in group
                    for r in rep.risks
                    if r.severity.value == "warn"
                }
            )
            rows.append(
                {
                    "student_ref": student_ref,
                    "sessions": len(group),
                    "prompts": prompts,
                    "warn_signals": sum(r.warn_count() for r in group),
                    "answer_seeking_ratio": seeking / prompts if prompts else 0.0,
                    "risk_kinds": kinds,
                }
            )
        return {"course_id": course_id, "sort": sort, "students": rows}

    @app.get("/students/{student_ref}/sessions")
    def get_student_sessions(
        student_ref: str, principal: Principal = Depends(principal_of)
    ):
        if principal.role == "student" and principal.pseudonym != student_ref:
            raise HTTPException(403, "students may only list their own sessions")
        course_id = principal.course_id
        reports = [
            r for r in course_reports(course_id) if r.student_ref == student_ref
        ]
        rows = [
            {
                "session_id": r.session_id,
                "started_at": format_ts(r.started_at),
                "ended_at": format_ts(r.ended_at),
                "week_tag": r.week_tag,
                "topic_tag": r.topic_tag,
                "message_count": r.message_count,
                "warn_signals": r.warn_count(),
            }
            for r in reports
        ]

        pairs = []
        for report in reports:
            try:
                session = state.store.get_session(report.session_id)
            except NotFoundError:
                continue
            pairs.append((session, list(report.labels)))
        cross = detect_repeated_misconception(
            pairs, student_ref, state.config.thresholds
        )
        return {
            "student_ref": student_ref,
            "sessions": rows,
            "cross_session_signals": (
                [signal_to_record(cross)] if isinstance(cross, RiskSignal) else []
            ),
        }

    @app.get("/sessions/{session_id}/report")
    def get_session_report(
        session_id: str, principal: Principal = Depends(principal_of)
    ):
        _report_for(session_id)  # 404s unknown ids, builds live reports
        try:
            view = state.store.get_report(
                session_id, principal.role, principal.pseudonym
            )
        except ForbiddenError as exc:
            raise HTTPException(403, str(exc))
        state.store.record_audit(
            principal.role,
            principal.subject,
            AuditAction.VIEW_SUMMARY,
            "session",
            session_id,
        )
        return report_to_record(view)

    def _report_for(session_id: str) -> SessionReport:
        try:
            return state.store.latest_report(session_id)
        except NotFoundError:
            pass
        try:
            session = state.store.get_session(session_id)
        except NotFoundError:
            raise HTTPException(404, "unknown session")
        report = build_session_report(session, state.taxonomy, state.backends)
        state.store.append_report(report)
        return report

    # -- evidence workflow ---------------------------------------------------

    @app.post("/sessions/{session_id}/evidence-request")
    def request_evidence(
        session_id: str,
        body: EvidenceRequest,
        principal: Principal = Depends(principal_of),
    ):
        if principal.role not in ("instructor", "admin"):
            raise HTTPException(403, "instructor or admin role required")
        if not body.reason.strip():
            raise HTTPException(400, "a non-empty reason is required")
        report = _report_for(session_id)
        if principal.role == "instructor" and principal.course_id != report.course_id:
            raise HTTPException(403, "wrong course scope")

        state.store.record_audit(
            principal.role,
            principal.subject,
            AuditAction.REQUEST_EVIDENCE,
            "session",
            session_id,
            justification=body.reason,
        )

        if principal.role != "admin":
            if report.warn_count() == 0:
                state.store.record_audit(
                    principal.role,
                    principal.subject,
                    AuditAction.REQUEST_EVIDENCE,
                    "session",
                    session_id,
                    justification="denied: not at-risk (no warn-severity signal)",
                )
                raise HTTPException(409, "not at-risk: no warn-severity signal")
            policy = state.store.sharing_policy(report.student_ref)
            if policy.level is SharingLevel.SUMMARY_ONLY:
                state.store.record_audit(
                    principal.role,
                    principal.subject,
                    AuditAction.REQUEST_EVIDENCE,
                    "session",
                    session_id,
                    justification="denied: student sharing policy is summary_only",
                )
                raise HTTPException(403, "student sharing policy forbids evidence")

        now = state.clock()
        grant = EvidenceGrant(
            grant_id=str(uuid.uuid4()),
            session_id=session_id,
            instructor_id=principal.subject,
            reason=body.reason,
            granted_at=now,
            expires_at=now + state.config.grant_ttl,
        )
        state.grants[grant.grant_id] = grant
        state.store.record_audit(
            principal.role,
            principal.subject,
            AuditAction.GRANT_EVIDENCE,
            "session",
            session_id,
            justification=body.reason,
        )
        return grant.to_record()

    @app.get("/sessions/{session_id}/evidence")
    def get_evidence(
        session_id: str, principal: Principal = Depends(principal_of)
    ):
        now = state.clock()
        grant = next(
            (
                g
                for g in state.grants.values()
                if g.session_id == session_id
                and g.instructor_id == principal.subject
                and g.expires_at > now
            ),
            None,
        )
        if grant is None:
            raise HTTPException(403, "no valid evidence grant for this session")
        report = _report_for(session_id)
        try:
            session = state.store.get_session(session_id)
        except NotFoundError:
            raise HTTPException(404, "unknown session")
        by_id = {m.message_id: m for m in session.messages}

        items = []
        for risk in report.risks:
            for message_id, span in risk.evidence:
                message = by_id.get(message_id)
                if message is None:
                    continue
                items.append(
                    {
                        "risk_kind": risk.kind.value,
                        "message_id": message_id,
                        "author": message.author.value,
                        "span": list(span) if span else None,
                        "text": message.text,
                    }
                )
        state.store.record_audit(
            principal.role,
            principal.subject,
            AuditAction.VIEW_EVIDENCE,
            "session",
            session_id,
            justification=grant.grant_id,
        )
        return {
            "session_id": session_id,
            "grant_id": grant.grant_id,
            "scope": grant.scope,
            "evidence": items,
        }

    # -- sharing + audit -------------------------------------------------------

    @app.put("/students/{student_ref}/sharing")
    def put_sharing(
        student_ref: str,
        body: SharingRequest,
        principal: Principal = Depends(principal_of),
    ):
        try:
            level = SharingLevel(body.level)
        except ValueError:
            raise HTTPException(400, f"unknown sharing level {body.level!r}")
        actor_id = (
            principal.pseudonym if principal.role == "student" else principal.subject
        )
        try:
            policy = state.store.set_sharing_policy(
                student_ref, level, principal.role, actor_id or ""
            )
        except ForbiddenError as exc:
            raise HTTPException(403, str(exc))
        return {
            "student_ref": policy.student_ref,
            "level": policy.level.value,
            "updated_at": format_ts(policy.updated_at) if policy.updated_at else None,
        }

    @app.get("/audit")
    def get_audit(principal: Principal = Depends(principal_of)):
        if principal.role == "admin":
            entries = state.store.audit_entries()
        elif principal.role == "student":
            own = principal.pseudonym
            entries = []
            for entry in state.store.audit_entries():
                if entry.target_type == "student" and entry.target_id == own:
                    entries.append(entry)
                elif entry.target_type == "session":
                    try:
                        session = state.store.get_session(entry.target_id)
                    except NotFoundError:
                        continue
                    if session.student_ref == own:
                        entries.append(entry)
        else:
            raise HTTPException(403, "audit log is admin- or subject-readable only")
        return {"entries": [audit_to_record(e) for e in entries]}

    return app
