"""Service and pipeline configuration: file-based with env overrides.

The course salt and token secret come from the environment when set
(TUTORLENS_COURSE_SALT, TUTORLENS_TOKEN_SECRET); a fixed dev value is
used otherwise so batch runs stay deterministic out of the box.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

from .errors import ConfigError
from .privacy import LogPolicy, RedactionRuleSet, load_ruleset
from .risk import RiskThresholds

logger = logging.getLogger(__name__)

SALT_ENV = "TUTORLENS_COURSE_SALT"
TOKEN_SECRET_ENV = "TUTORLENS_TOKEN_SECRET"
_DEV_SALT = "insecure-dev-salt"


@dataclass
class AppConfig:
    course_keys: dict[str, str] = field(default_factory=dict)
    course_salt: bytes = b""
    ruleset: RedactionRuleSet = field(default_factory=RedactionRuleSet)
    thresholds: RiskThresholds = field(default_factory=RiskThresholds)
    idle_gap: timedelta = timedelta(minutes=30)
    grant_ttl: timedelta = timedelta(hours=24)
    token_ttl: timedelta = timedelta(hours=2)
    token_secret: str = ""
    taxonomy_path: str | None = None
    retention_days: int | None = None  # config-exposed, enforcement is manual


def _resolve_salt(explicit: str | None) -> bytes:
    salt = os.environ.get(SALT_ENV) or explicit
    if not salt:
        logger.warning(
            "%s unset; using the documented dev salt (fine for tests, not "
            "for deployments)",
            SALT_ENV,
        )
        salt = _DEV_SALT
    return salt.encode("utf-8")


def load_config(path: str | Path | None = None) -> AppConfig:
    """Build an AppConfig from an optional JSON file plus the environment."""
    record: dict = {}
    if path is not None:
        try:
            record = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config file unreadable: {exc}") from exc

    ruleset_rec = dict(record.get("redaction", {}))
    if "policy" in record:
        ruleset_rec.setdefault("policy", record["policy"])
    ruleset = load_ruleset(ruleset_rec) if ruleset_rec else RedactionRuleSet()

    try:
        thresholds = RiskThresholds.from_record(record.get("thresholds", {}))
        policy = LogPolicy(record.get("policy", ruleset.policy.value))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if ruleset.policy is not policy:
        ruleset = RedactionRuleSet(
            rules=ruleset.rules, roster_names=ruleset.roster_names, policy=policy
        )

    token_secret = os.environ.get(TOKEN_SECRET_ENV) or record.get(
        "token_secret", "insecure-dev-token-secret"
    )
    return AppConfig(
        course_keys=dict(record.get("course_keys", {})),
        course_salt=_resolve_salt(record.get("course_salt")),
        ruleset=ruleset,
        thresholds=thresholds,
        idle_gap=timedelta(minutes=record.get("idle_gap_minutes", 30)),
        grant_ttl=timedelta(hours=record.get("grant_ttl_hours", 24)),
        token_ttl=timedelta(hours=record.get("token_ttl_hours", 2)),
        token_secret=token_secret,
        taxonomy_path=record.get("taxonomy_path"),
        retention_days=record.get("retention_days"),
    )
