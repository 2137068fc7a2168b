"""Prompt-type classification: heuristic keyword backend plus optional
external backend with per-message fallback.

The heuristic scores each fine type by how many of its keyword rules
appear as substrings of the normalized prompt (lowercased, whitespace
collapsed, code blocks stripped) and picks the max; ties break by fine
type order. A designated rule-less fallback type keeps it total.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol

import httpx

from .core import (
    ATTR_ANSWER_SEEKING,
    ATTR_VERIFICATION,
    FineType,
    PromptLabel,
    Session,
    TaxonomyConfig,
    strip_code_blocks,
    taxonomy_from_record,
)
from .errors import ValidationError

logger = logging.getLogger(__name__)


class BackendKind(str, Enum):
    HEURISTIC = "heuristic"
    EXTERNAL = "external"


DEFAULT_TAXONOMY = TaxonomyConfig(
    categories=("planning", "monitoring", "optimization", "other"),
    fine_types=(
        FineType(
            "task_clarification",
            "planning",
            (
                "what is the task asking",
                "understand the assignment",
                "what are the requirements",
                "clarify the task",
                "is it required to",
            ),
        ),
        FineType(
            "concept_explanation",
            "planning",
            (
                "explain the concept",
                "what does the term",
                "explain how",
                "what is the difference between",
                "explain what",
            ),
        ),
        FineType(
            "approach_request",
            "planning",
            (
                "how should i approach",
                "how do i start",
                "what approach should",
                "outline the steps",
                "plan for solving",
            ),
        ),
        FineType(
            "full_solution_request",
            "planning",
            (
                "write the complete code",
                "give me the full solution",
                "write the code for",
                "complete solution",
                "just give me the answer",
                "solve this for me",
            ),
            frozenset({ATTR_ANSWER_SEEKING}),
        ),
        FineType(
            "debugging_help",
            "monitoring",
            (
                "error",
                "exception",
                "traceback",
                "how do i fix",
                "not working",
                "doesn't work",
                "crashes",
            ),
        ),
        FineType(
            "code_behavior_question",
            "monitoring",
            (
                "why does my code",
                "unexpected output",
                "why is the output",
                "what is my code doing",
                "prints the wrong",
            ),
        ),
        FineType(
            "progress_check",
            "monitoring",
            (
                "is this correct",
                "am i on the right track",
                "does this look right",
                "is my solution correct",
                "can you check my",
            ),
            frozenset({ATTR_VERIFICATION}),
        ),
        FineType(
            "refactor_request",
            "optimization",
            ("refactor", "clean up my code", "more readable", "restructure my"),
        ),
        FineType(
            "efficiency_request",
            "optimization",
            (
                "more efficient",
                "optimize",
                "faster way",
                "time complexity",
                "use less memory",
            ),
        ),
        FineType(
            "alternative_solution",
            "optimization",
            (
                "another way to",
                "alternative approach",
                "different way to solve",
                "other ways to",
            ),
        ),
        FineType(
            "style_feedback",
            "optimization",
            (
                "naming convention",
                "code style",
                "idiomatic",
                "best practices",
                "follow pep",
            ),
        ),
        FineType("uncategorized", "other"),
    ),
    version="default-1",
)

_WS = re.compile(r"\s+")


def normalize(text: str) -> str:
    """Lowercase, strip code blocks, collapse whitespace."""
    return _WS.sub(" ", strip_code_blocks(text).lower()).strip()


def classify_prompt(
    text: str, taxonomy: TaxonomyConfig, message_id: str = ""
) -> PromptLabel:
    """Deterministically label one student prompt.

    Confidence is the winner's matched-rule coverage ratio, not a
    calibrated probability.
    """
    norm = normalize(text)
    best: FineType | None = None
    best_score = 0
    for ft in taxonomy.fine_types:
        score = sum(1 for rule in ft.keyword_rules if rule in norm)
        if score > best_score:
            best = ft
            best_score = score
    if best is None:
        best = taxonomy.fallback
    confidence = best_score / max(1, len(best.keyword_rules))
    return PromptLabel(
        message_id=message_id,
        fine_id=best.fine_id,
        category_id=best.category_id,
        confidence=confidence,
        backend=BackendKind.HEURISTIC.value,
    )


class ExternalClassifier(Protocol):
    def classify(self, text: str, taxonomy: TaxonomyConfig) -> tuple[str, float]:
        """Return (fine_id, confidence); may raise on any failure."""
        ...


@dataclass(frozen=True)
class ExternalBackendConfig:
    endpoint: str
    timeout: float = 5.0
    max_retries: int = 2


class HttpClassifier:
    """One-request/one-reply HTTP contract for an external classifier.

    Request: {"text": ..., "fine_types": [{"fine_id", "description"}, ...]}
    Reply:   {"fine_id": ..., "confidence": ...}
    """

    def __init__(self, config: ExternalBackendConfig, client: httpx.Client | None = None):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout)

    def classify(self, text: str, taxonomy: TaxonomyConfig) -> tuple[str, float]:
        payload = {
            "text": text,
            "fine_types": [
                {
                    "fine_id": ft.fine_id,
                    "description": f"{ft.fine_id.replace('_', ' ')} ({ft.category_id})",
                }
                for ft in taxonomy.fine_types
            ],
        }
        last_error: Exception | None = None
        for _attempt in range(self.config.max_retries + 1):
            try:
                resp = self._client.post(self.config.endpoint, json=payload)
                resp.raise_for_status()
                body = resp.json()
                return str(body["fine_id"]), float(body["confidence"])
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
        raise last_error if last_error else RuntimeError("unreachable")


@dataclass
class ClassifierBackend:
    """Active backend selection; the heuristic is always the fallback."""

    kind: BackendKind = BackendKind.HEURISTIC
    external: ExternalClassifier | None = None


def classify_session(
    session: Session,
    taxonomy: TaxonomyConfig,
    backend: ClassifierBackend | None = None,
) -> list[PromptLabel]:
    """One label per student message; assistant messages stay unlabeled.

    External failures (timeout, malformed reply, unknown fine id) fall
    back per message to the heuristic; the label records which path won.
    """
    backend = backend or ClassifierBackend()
    labels: list[PromptLabel] = []
    fine_ids = {ft.fine_id for ft in taxonomy.fine_types}
    for message in session.student_messages():
        if backend.kind is BackendKind.EXTERNAL and backend.external is not None:
            try:
                fine_id, confidence = backend.external.classify(message.text, taxonomy)
                if fine_id not in fine_ids:
                    raise ValueError(f"reply outside taxonomy: {fine_id}")
                ft = taxonomy.fine_type(fine_id)
                labels.append(
                    PromptLabel(
                        message_id=message.message_id,
                        fine_id=fine_id,
                        category_id=ft.category_id,
                        confidence=min(1.0, max(0.0, confidence)),
                        backend=BackendKind.EXTERNAL.value,
                    )
                )
                continue
            except Exception as exc:
                logger.warning(
                    "external classifier failed for %s, falling back: %s",
                    message.message_id,
                    exc,
                )
        labels.append(classify_prompt(message.text, taxonomy, message.message_id))
    return labels


def load_taxonomy(path: str | Path) -> TaxonomyConfig:
    """Load and validate a taxonomy config file (JSON)."""
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError([f"taxonomy file unreadable: {exc}"]) from exc
    return taxonomy_from_record(record)
