"""Structured pass/fail records for numerical audits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _plain(value: Any) -> Any:
    """Convert numpy scalars/arrays (recursively) into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return value


@dataclass
class AuditReport:
    """Outcome of one verified inequality (or a small family of them).

    ``status`` is one of ``"pass"``, ``"fail"``, ``"not-applicable"`` and
    ``"precondition-failure"``; ``passed`` is true only for ``"pass"``.
    """

    name: str
    status: str
    constants: dict[str, Any] = field(default_factory=dict)
    tolerances: dict[str, Any] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    @classmethod
    def from_checks(cls, name, checks, **kwargs):
        """Build a report whose status is the conjunction of ``checks``."""
        checks = {k: bool(v) for k, v in checks.items()}
        status = "pass" if all(checks.values()) else "fail"
        details = dict(kwargs.pop("details", {}))
        details["checks"] = checks
        return cls(name=name, status=status, details=details, **kwargs)

    def failing_checks(self) -> list[str]:
        checks = self.details.get("checks", {})
        return [k for k, ok in checks.items() if not ok]

    def to_dict(self) -> dict[str, Any]:
        return _plain(
            {
                "name": self.name,
                "status": self.status,
                "passed": self.passed,
                "constants": self.constants,
                "tolerances": self.tolerances,
                "details": self.details,
                "flags": list(self.flags),
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def merge_reports(name: str, reports: list[AuditReport]) -> AuditReport:
    """Overall pass only if every component passes."""
    failing = [r.name for r in reports if not r.passed]
    return AuditReport(
        name=name,
        status="pass" if reports and not failing else "fail",
        details={"components": [r.to_dict() for r in reports], "failing": failing},
    )
