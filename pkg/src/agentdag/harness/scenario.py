"""Scenario files: scripted executor behaviour keyed by task-description patterns.

A scenario is YAML::

    name: report
    tasks:                      # root tasks used by ``simulate`` / ``evolve``
      - "write the quarterly report"
    defaults:                   # answers for actions an entry does not script
      judge: success
      merge: concat
      validate: 1.0
    entries:
      - match: "quarterly report"          # regex, searched case-insensitively
        decompose:
          - {task: "collect sales figures", writes: [data/sales.csv]}
          - "draft the summary"
      - match: "collect sales"
        atom:
          output: "sales collected"
          artifacts:
            - {addr: data/sales.csv, content: "q,amount\\n1,10\\n", desc: "sales table"}
          delay: 0.1
        fault: malformed                   # malformed | dangling | wrong_name |
        fault_attempts: 1                  # oversized | timeout | judge_write

Entries are tried in file order; the first whose pattern matches the task
description and that scripts the requested action wins. An action with no
scripted answer and no default is a scenario error (:class:`UnmatchedRequest`).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..errors import ScenarioError

FAULTS = ("malformed", "dangling", "wrong_name", "oversized", "timeout", "judge_write")

# Failure signature each fault leaves in the record tree.
FAULT_SIGNATURES = {
    "malformed": "contract violation: malformed JSON",
    "dangling": "dangling reference",
    "wrong_name": "format: expected file",
    "oversized": "re-requested",
    "timeout": "timeout",
    "judge_write": "verify-only violation",
}

ACTIONS = ("decompose", "atom", "merge", "validate", "judge", "coverage", "summary", "describe")


@dataclass
class ScenarioEntry:
    match: str
    responses: dict[str, Any] = field(default_factory=dict)
    fault: str | None = None
    fault_attempts: int | None = None
    expect: str | None = None

    def __post_init__(self) -> None:
        try:
            self.pattern = re.compile(self.match, re.IGNORECASE)
        except re.error as exc:
            raise ScenarioError(f"bad pattern {self.match!r}: {exc}") from None
        if self.fault is not None and self.fault not in FAULTS:
            raise ScenarioError(f"unknown fault directive {self.fault!r}; expected one of {FAULTS}")

    def fault_active(self, attempt: int) -> bool:
        if self.fault is None:
            return False
        return self.fault_attempts is None or attempt <= self.fault_attempts

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ScenarioEntry:
        if "match" not in d:
            raise ScenarioError(f"scenario entry without 'match': {d}")
        unknown = set(d) - set(ACTIONS) - {"match", "fault", "fault_attempts", "expect"}
        if unknown:
            raise ScenarioError(f"unknown scenario keys {sorted(unknown)} in entry {d['match']!r}")
        return cls(
            match=str(d["match"]),
            responses={k: d[k] for k in ACTIONS if k in d},
            fault=d.get("fault"),
            fault_attempts=d.get("fault_attempts"),
            expect=d.get("expect"),
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"match": self.match, **self.responses}
        if self.fault:
            d["fault"] = self.fault
        if self.fault_attempts is not None:
            d["fault_attempts"] = self.fault_attempts
        if self.expect is not None:
            d["expect"] = self.expect
        return d


@dataclass
class Scenario:
    entries: list[ScenarioEntry] = field(default_factory=list)
    defaults: dict[str, Any] = field(default_factory=dict)
    tasks: list[Any] = field(default_factory=list)
    backends: list[dict[str, Any]] = field(default_factory=list)
    name: str = "scenario"

    def lookup(self, task_text: str, action: str) -> ScenarioEntry | None:
        """First entry matching ``task_text`` that scripts ``action`` (or carries a fault)."""
        for entry in self.entries:
            if entry.pattern.search(task_text) and action in entry.responses:
                return entry
        return None

    def matching(self, task_text: str) -> ScenarioEntry | None:
        for entry in self.entries:
            if entry.pattern.search(task_text):
                return entry
        return None

    def with_overrides(self, entries: list[dict[str, Any]]) -> Scenario:
        """Copy whose ``entries`` take precedence over this scenario's."""
        extra = [ScenarioEntry.from_dict(e) for e in entries]
        return Scenario(extra + list(self.entries), dict(self.defaults), list(self.tasks), [], self.name)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Scenario:
        unknown = set(d) - {"entries", "defaults", "tasks", "backends", "name"}
        if unknown:
            raise ScenarioError(f"unknown top-level scenario keys {sorted(unknown)}")
        return cls(
            entries=[ScenarioEntry.from_dict(e) for e in d.get("entries") or ()],
            defaults=dict(d.get("defaults") or {}),
            tasks=list(d.get("tasks") or ()),
            backends=list(d.get("backends") or ()),
            name=str(d.get("name", "scenario")),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "tasks": list(self.tasks),
            "defaults": dict(self.defaults),
            "entries": [e.to_dict() for e in self.entries],
            "backends": list(self.backends),
        }

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")
