"""Run metrics, derived from record trees so that they are reproducible."""

from __future__ import annotations

import json
from collections.abc import Iterable
from dataclasses import dataclass, field
from typing import Any

from ..records import TaskRecord


@dataclass
class Metrics:
    runs: int = 0
    runs_succeeded: int = 0
    tasks: int = 0
    attempts: int = 0
    retries: int = 0
    audits: int = 0
    judged: int = 0
    rejects: int = 0
    failures: int = 0
    warnings: int = 0
    context_sizes: list[int] = field(default_factory=list)
    history_sizes: list[int] = field(default_factory=list)
    tokens: int = 0
    token_budget: int = 0
    wall_time: float = 0.0

    @property
    def max_context(self) -> int:
        return max(self.context_sizes, default=0)

    @property
    def bounded(self) -> bool:
        return self.max_context <= self.token_budget

    def add_tree(self, root: TaskRecord) -> None:
        self.runs += 1
        self.runs_succeeded += int(root.succeeded)
        history = self.history_sizes[-1] if self.history_sizes else 0
        for rec in root.walk_post():
            self.tasks += 1
            self.warnings += len(rec.warnings)
            for att in rec.attempts:
                self.attempts += 1
                self.retries += int(att.attempt > 1)
                self.audits += int(att.validation is not None)
                self.judged += int(att.judge is not None)
                self.rejects += int(att.verdict == "rejected")
                self.failures += int(att.verdict == "failed")
                self.context_sizes.append(att.context_size)
                history += att.history_delta
                self.history_sizes.append(history)

    @classmethod
    def from_records(
        cls, roots: Iterable[TaskRecord], *, token_budget: int = 0, tokens: int = 0, wall_time: float = 0.0
    ) -> Metrics:
        m = cls(token_budget=token_budget, tokens=tokens, wall_time=wall_time)
        for root in roots:
            m.add_tree(root)
        return m

    def to_dict(self, *, wall: bool = False) -> dict[str, Any]:
        d = {
            "runs": self.runs,
            "runs_succeeded": self.runs_succeeded,
            "tasks": self.tasks,
            "attempts": self.attempts,
            "retries": self.retries,
            "audits": self.audits,
            "judged": self.judged,
            "rejects": self.rejects,
            "failures": self.failures,
            "warnings": self.warnings,
            "tokens": self.tokens,
            "token_budget": self.token_budget,
            "max_context": self.max_context,
            "context_sizes": list(self.context_sizes),
            "history_sizes": list(self.history_sizes),
        }
        if wall:
            d["wall_time"] = self.wall_time
        return d

    def dumps(self, *, wall: bool = False) -> str:
        return json.dumps(self.to_dict(wall=wall), sort_keys=True, indent=1)
