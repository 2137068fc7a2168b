"""Learning record store: append-only, file-backed, crash-recoverable.

Layout under the store root: one sessions/reports/events log per course
directory, plus a single audit log and sharing-policy log at the root.
Every file starts with an 8-byte magic (4-byte format tag + 4-byte
content tag); records are framed as length + crc32 + payload. Reopening
truncates any partial tail, so a crash loses at most the record being
written. One exclusive writer per log; readers see immutable values.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
import zlib
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Callable

from .core import (
    Message,
    Session,
    format_ts,
    message_from_record,
    message_to_record,
    parse_ts,
    session_from_record,
    session_to_record,
)
from .errors import (
    DuplicateRecordError,
    ForbiddenError,
    NotFoundError,
    StorageError,
    UnsupportedOperationError,
)
from .ingest import DEFAULT_IDLE_GAP
from .reflect import SessionReport, report_from_record, report_to_record

_FORMAT = b"TLV1"
_FRAME = struct.Struct(">II")  # payload length, crc32


class AuditAction(str, Enum):
    VIEW_SUMMARY = "view_summary"
    REQUEST_EVIDENCE = "request_evidence"
    GRANT_EVIDENCE = "grant_evidence"
    VIEW_EVIDENCE = "view_evidence"
    CHANGE_SHARING = "change_sharing"


class SharingLevel(str, Enum):
    SUMMARY_ONLY = "summary_only"
    RISK_EVIDENCE_OK = "risk_evidence_ok"
    FULL_REDACTED_OK = "full_redacted_ok"


@dataclass(frozen=True)
class AuditEntry:
    entry_id: str
    actor_role: str
    actor_id: str
    action: AuditAction
    target_type: str  # "session" | "student"
    target_id: str
    timestamp: datetime
    justification: str | None = None


def audit_to_record(entry: AuditEntry) -> dict:
    return {
        "entry_id": entry.entry_id,
        "actor": {"role": entry.actor_role, "principal_id": entry.actor_id},
        "action": entry.action.value,
        "target": {"type": entry.target_type, "id": entry.target_id},
        "timestamp": format_ts(entry.timestamp),
        "justification": entry.justification,
    }


def audit_from_record(rec: dict) -> AuditEntry:
    return AuditEntry(
        entry_id=rec["entry_id"],
        actor_role=rec["actor"]["role"],
        actor_id=rec["actor"]["principal_id"],
        action=AuditAction(rec["action"]),
        target_type=rec["target"]["type"],
        target_id=rec["target"]["id"],
        timestamp=parse_ts(rec["timestamp"]),
        justification=rec.get("justification"),
    )


@dataclass(frozen=True)
class SharingPolicy:
    student_ref: str
    level: SharingLevel
    updated_at: datetime | None = None


class AppendLog:
    """One append-only framed log file with truncation recovery."""

    def __init__(self, path: Path, content_tag: bytes):
        if len(content_tag) != 4:
            raise ValueError("content tag must be 4 bytes")
        self.path = path
        self.magic = _FORMAT + content_tag
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            with open(self.path, "wb") as fh:
                fh.write(self.magic)
                fh.flush()
                os.fsync(fh.fileno())
        self._recover()
        self._fh = open(self.path, "ab")

    def _recover(self) -> None:
        """Scan frames, keep the longest valid prefix, drop a partial tail."""
        with open(self.path, "rb") as fh:
            header = fh.read(8)
            if header != self.magic:
                raise StorageError(
                    f"{self.path}: bad magic {header!r}, expected {self.magic!r}"
                )
            valid_end = 8
            while True:
                frame = fh.read(_FRAME.size)
                if len(frame) < _FRAME.size:
                    break
                length, crc = _FRAME.unpack(frame)
                payload = fh.read(length)
                if len(payload) < length or zlib.crc32(payload) != crc:
                    break
                valid_end += _FRAME.size + length
        if valid_end < self.path.stat().st_size:
            with open(self.path, "r+b") as fh:
                fh.truncate(valid_end)
                fh.flush()
                os.fsync(fh.fileno())

    def append(self, payload: bytes, sync: bool = True) -> None:
        with self._lock:
            self._fh.write(_FRAME.pack(len(payload), zlib.crc32(payload)))
            self._fh.write(payload)
            self._fh.flush()
            if sync:
                os.fsync(self._fh.fileno())

    def read_all(self) -> list[bytes]:
        payloads: list[bytes] = []
        with open(self.path, "rb") as fh:
            fh.read(8)
            while True:
                frame = fh.read(_FRAME.size)
                if len(frame) < _FRAME.size:
                    break
                length, crc = _FRAME.unpack(frame)
                payload = fh.read(length)
                if len(payload) < length or zlib.crc32(payload) != crc:
                    break
                payloads.append(payload)
        return payloads

    def close(self) -> None:
        self._fh.close()


def _encode(record: dict) -> bytes:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":")).encode(
        "utf-8"
    )


class RecordStore:
    """Embedded course-scoped store with in-memory indexes rebuilt on open."""

    def __init__(
        self,
        root: str | Path,
        sync: bool = True,
        clock: Callable[[], datetime] | None = None,
    ):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sync = sync
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self._lock = threading.Lock()

        self._session_logs: dict[str, AppendLog] = {}
        self._report_logs: dict[str, AppendLog] = {}
        self._event_logs: dict[str, AppendLog] = {}
        self._audit_log = AppendLog(self.root / "audit.log", b"AUDT")
        self._sharing_log = AppendLog(self.root / "sharing.log", b"POLI")

        self._sessions: dict[str, Session] = {}
        self._session_course: dict[str, str] = {}
        self._reports: dict[str, list[SessionReport]] = {}
        self._report_ids: set[str] = set()
        self._audit: list[AuditEntry] = []
        self._sharing: dict[str, SharingPolicy] = {}
        self._events: dict[str, list[tuple[str, Message]]] = {}

        self._load()

    # -- loading -----------------------------------------------------------

    def _course_log(self, kind: str, course_id: str) -> AppendLog:
        registry, tag = {
            "sessions": (self._session_logs, b"SESS"),
            "reports": (self._report_logs, b"REPT"),
            "events": (self._event_logs, b"EVNT"),
        }[kind]
        if course_id not in registry:
            registry[course_id] = AppendLog(
                self.root / course_id / f"{kind}.log", tag
            )
        return registry[course_id]

    def _load(self) -> None:
        for course_dir in sorted(p for p in self.root.iterdir() if p.is_dir()):
            course_id = course_dir.name
            if (course_dir / "sessions.log").exists():
                for payload in self._course_log("sessions", course_id).read_all():
                    session = session_from_record(json.loads(payload))
                    self._sessions[session.session_id] = session
                    self._session_course[session.session_id] = course_id
            if (course_dir / "reports.log").exists():
                for payload in self._course_log("reports", course_id).read_all():
                    report = report_from_record(json.loads(payload))
                    self._reports.setdefault(report.session_id, []).append(report)
                    self._report_ids.add(report.report_id)
            if (course_dir / "events.log").exists():
                for payload in self._course_log("events", course_id).read_all():
                    rec = json.loads(payload)
                    self._events.setdefault(course_id, []).append(
                        (rec["student_ref"], message_from_record(rec["message"]))
                    )
        for payload in self._audit_log.read_all():
            self._audit.append(audit_from_record(json.loads(payload)))
        for payload in self._sharing_log.read_all():
            rec = json.loads(payload)
            policy = SharingPolicy(
                student_ref=rec["student_ref"],
                level=SharingLevel(rec["level"]),
                updated_at=parse_ts(rec["updated_at"]),
            )
            self._sharing[policy.student_ref] = policy

    # -- sessions ----------------------------------------------------------

    def append_session(self, session: Session) -> str:
        """Durably append one filtered session; duplicate ids are rejected."""
        with self._lock:
            if session.session_id in self._sessions:
                raise DuplicateRecordError(
                    f"session {session.session_id} already stored"
                )
            log = self._course_log("sessions", session.course_id)
            log.append(_encode(session_to_record(session)), sync=self.sync)
            self._sessions[session.session_id] = session
            self._session_course[session.session_id] = session.course_id
        return session.session_id

    def get_session(self, session_id: str) -> Session:
        # live relay sessions materialize from the events log on demand
        if session_id in self._sessions:
            return self._sessions[session_id]
        for course_id in list(self._events):
            for session in self.live_sessions(course_id):
                if session.session_id == session_id:
                    return session
        raise NotFoundError(f"session {session_id} not found")

    def sessions(self, course_id: str) -> list[Session]:
        return [
            s
            for sid, s in self._sessions.items()
            if self._session_course[sid] == course_id
        ]

    def sessions_for_student(self, course_id: str, student_ref: str) -> list[Session]:
        return [
            s for s in self.sessions(course_id) if s.student_ref == student_ref
        ]

    # -- reports -----------------------------------------------------------

    def append_report(self, report: SessionReport) -> str:
        """Append a report version; identical content hashes deduplicate."""
        with self._lock:
            if report.report_id in self._report_ids:
                return report.report_id
            log = self._course_log("reports", report.course_id)
            log.append(_encode(report_to_record(report)), sync=self.sync)
            self._reports.setdefault(report.session_id, []).append(report)
            self._report_ids.add(report.report_id)
        return report.report_id

    def latest_report(self, session_id: str) -> SessionReport:
        versions = self._reports.get(session_id)
        if not versions:
            raise NotFoundError(f"no report for session {session_id}")
        return versions[-1]

    def reports(self, course_id: str) -> list[SessionReport]:
        out = []
        for versions in self._reports.values():
            latest = versions[-1]
            if latest.course_id == course_id:
                out.append(latest)
        out.sort(key=lambda r: r.session_id)
        return out

    def get_report(
        self, session_id: str, requester_role: str, requester_ref: str | None = None
    ) -> SessionReport:
        """Role-checked report view.

        Instructors and admins get the full report (which by construction
        carries no message text); students only their own.
        """
        report = self.latest_report(session_id)
        if requester_role in ("instructor", "admin"):
            return report
        if requester_role == "student" and requester_ref == report.student_ref:
            return report
        raise ForbiddenError(
            f"role {requester_role} may not read report for {session_id}"
        )

    # -- audit -------------------------------------------------------------

    def record_audit(
        self,
        actor_role: str,
        actor_id: str,
        action: AuditAction,
        target_type: str,
        target_id: str,
        justification: str | None = None,
    ) -> str:
        with self._lock:
            entry = AuditEntry(
                entry_id=f"aud-{len(self._audit):08d}",
                actor_role=actor_role,
                actor_id=actor_id,
                action=action,
                target_type=target_type,
                target_id=target_id,
                timestamp=self.clock(),
                justification=justification,
            )
            self._audit_log.append(_encode(audit_to_record(entry)), sync=self.sync)
            self._audit.append(entry)
        return entry.entry_id

    def audit_entries(
        self,
        action: AuditAction | None = None,
        target_id: str | None = None,
    ) -> list[AuditEntry]:
        out = self._audit
        if action is not None:
            out = [e for e in out if e.action is action]
        if target_id is not None:
            out = [e for e in out if e.target_id == target_id]
        return list(out)

    def delete_audit_entry(self, entry_id: str) -> None:
        raise UnsupportedOperationError("audit log is append-only")

    # -- sharing policies ----------------------------------------------------

    def sharing_policy(self, student_ref: str) -> SharingPolicy:
        """Stored policy, or the summary_only default when unset."""
        return self._sharing.get(
            student_ref,
            SharingPolicy(student_ref=student_ref, level=SharingLevel.SUMMARY_ONLY),
        )

    def set_sharing_policy(
        self,
        student_ref: str,
        level: SharingLevel,
        actor_role: str,
        actor_id: str,
    ) -> SharingPolicy:
        if not (
            actor_role == "admin"
            or (actor_role == "student" and actor_id == student_ref)
        ):
            raise ForbiddenError(
                "sharing level may only be changed by the student or an admin"
            )
        with self._lock:
            policy = SharingPolicy(
                student_ref=student_ref, level=level, updated_at=self.clock()
            )
            self._sharing_log.append(
                _encode(
                    {
                        "student_ref": policy.student_ref,
                        "level": policy.level.value,
                        "updated_at": format_ts(policy.updated_at),
                    }
                ),
                sync=self.sync,
            )
            self._sharing[student_ref] = policy
        self.record_audit(
            actor_role, actor_id, AuditAction.CHANGE_SHARING, "student", student_ref
        )
        return policy

    # -- live relay events ---------------------------------------------------

    def append_event(self, course_id: str, student_ref: str, message: Message) -> None:
        with self._lock:
            log = self._course_log("events", course_id)
            log.append(
                _encode(
                    {"student_ref": student_ref, "message": message_to_record(message)}
                ),
                sync=self.sync,
            )
            self._events.setdefault(course_id, []).append((student_ref, message))

    def live_sessions(
        self,
        course_id: str,
        idle_gap: timedelta = DEFAULT_IDLE_GAP,
        policy: str = "redacted_log",
    ) -> list[Session]:
        """Materialize sessions from relay events by the idle-gap rule."""
        by_student: dict[str, list[Message]] = {}
        for student_ref, message in self._events.get(course_id, []):
            by_student.setdefault(student_ref, []).append(message)

        sessions: list[Session] = []
        for student_ref, messages in sorted(by_student.items()):
            messages.sort(key=lambda m: (m.timestamp, m.message_id))
            group: list[Message] = []
            for message in messages:
                if group and message.timestamp - group[-1].timestamp > idle_gap:
                    sessions.append(
                        self._materialize(course_id, student_ref, group, policy)
                    )
                    group = []
                group.append(message)
            if group:
                sessions.append(
                    self._materialize(course_id, student_ref, group, policy)
                )
        sessions.sort(key=lambda s: (s.started_at, s.session_id))
        return sessions

    @staticmethod
    def _materialize(
        course_id: str, student_ref: str, messages: list[Message], policy: str
    ) -> Session:
        start = messages[0].timestamp
        basis = f"{course_id}|{student_ref}|{format_ts(start)}"
        session_id = "live-" + hashlib.sha256(basis.encode()).hexdigest()[:10]
        return Session(
            session_id=session_id,
            student_ref=student_ref,
            course_id=course_id,
            messages=tuple(messages),
            started_at=start,
            ended_at=messages[-1].timestamp,
            policy=policy,
        )

    def close(self) -> None:
        for registry in (self._session_logs, self._report_logs, self._event_logs):
            for log in registry.values():
                log.close()
        self._audit_log.close()
        self._sharing_log.close()
