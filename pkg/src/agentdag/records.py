"""Tasks and the execution record tree produced by a run."""

from __future__ import annotations

import json
from collections.abc import Iterator
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .protocol import AgentOutput

WALL_FIELDS = ("started_at", "finished_at")


class TaskStatus(str, Enum):
    PENDING = "pending"
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"


@dataclass
class Task:
    id: str
    description: str
    depth: int = 0
    parent: str | None = None
    children: list[str] = field(default_factory=list)
    status: TaskStatus = TaskStatus.PENDING
    writes: tuple[str, ...] = ()
    agent_hint: str | None = None

    def __post_init__(self) -> None:
        if not self.description or not self.description.strip():
            raise ValueError("task description must be non-empty")
        if self.depth < 0:
            raise ValueError("task depth must be non-negative")
        self.status = TaskStatus(self.status)
        self.writes = tuple(self.writes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "description": self.description,
            "depth": self.depth,
            "parent": self.parent,
            "children": list(self.children),
            "status": self.status.value,
            "writes": list(self.writes),
            "agent_hint": self.agent_hint,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Task:
        return cls(
            id=d["id"],
            description=d["description"],
            depth=d.get("depth", 0),
            parent=d.get("parent"),
            children=list(d.get("children") or ()),
            status=TaskStatus(d.get("status", "pending")),
            writes=tuple(d.get("writes") or ()),
            agent_hint=d.get("agent_hint"),
        )


@dataclass
class ExecutionRecord:
    """One attempt of one agent at one task."""

    task_id: str
    agent_id: str
    attempt: int
    output: AgentOutput
    verdict: str  # accepted | rejected | failed
    validation: dict[str, Any] | None = None
    judge: dict[str, Any] | None = None
    context_size: int = 0
    history_delta: int = 0
    stack: list[str] = field(default_factory=list)
    started_at: float = 0.0
    finished_at: float = 0.0

    def to_dict(self, wall: bool = True) -> dict[str, Any]:
        d = {
            "task_id": self.task_id,
            "agent_id": self.agent_id,
            "attempt": self.attempt,
            "output": self.output.to_dict(),
            "verdict": self.verdict,
            "validation": self.validation,
            "judge": self.judge,
            "context_size": self.context_size,
            "history_delta": self.history_delta,
            "stack": list(self.stack),
        }
        if wall:
            d["started_at"] = self.started_at
            d["finished_at"] = self.finished_at
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ExecutionRecord:
        o = d["output"]
        return cls(
            task_id=d["task_id"],
            agent_id=d["agent_id"],
            attempt=d["attempt"],
            output=AgentOutput(o["status"], o["output"], o["error_information"]),
            verdict=d["verdict"],
            validation=d.get("validation"),
            judge=d.get("judge"),
            context_size=d.get("context_size", 0),
            history_delta=d.get("history_delta", 0),
            stack=list(d.get("stack") or ()),
            started_at=d.get("started_at", 0.0),
            finished_at=d.get("finished_at", 0.0),
        )


@dataclass
class TaskRecord:
    """Node of the record tree: a task, who handled it, its attempts and sub-tasks."""

    task: Task
    agent_id: str
    role: str
    status: TaskStatus = TaskStatus.PENDING
    attempts: list[ExecutionRecord] = field(default_factory=list)
    children: list[TaskRecord] = field(default_factory=list)
    output: AgentOutput | None = None
    error_information: str = ""
    warnings: list[str] = field(default_factory=list)
    decomposition: list[str] = field(default_factory=list)
    coverage: dict[str, Any] | None = None
    route: dict[str, Any] | None = None

    @property
    def succeeded(self) -> bool:
        return self.status is TaskStatus.SUCCEEDED

    def walk(self) -> Iterator[TaskRecord]:
        """Pre-order traversal."""
        yield self
        for child in self.children:
            yield from child.walk()

    def walk_post(self) -> Iterator[TaskRecord]:
        for child in self.children:
            yield from child.walk_post()
        yield self

    def merged_refs(self) -> list[str]:
        """Addresses this record's accepted output references."""
        if self.output is None or not self.succeeded:
            return []
        return [addr for addr, _ in self.output.refs()]

    def to_dict(self, wall: bool = True) -> dict[str, Any]:
        return {
            "task": self.task.to_dict(),
            "agent_id": self.agent_id,
            "role": self.role,
            "status": self.status.value,
            "attempts": [a.to_dict(wall) for a in self.attempts],
            "children": [c.to_dict(wall) for c in self.children],
            "output": self.output.to_dict() if self.output else None,
            "error_information": self.error_information,
            "warnings": list(self.warnings),
            "decomposition": list(self.decomposition),
            "coverage": self.coverage,
            "route": self.route,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TaskRecord:
        o = d.get("output")
        return cls(
            task=Task.from_dict(d["task"]),
            agent_id=d["agent_id"],
            role=d["role"],
            status=TaskStatus(d["status"]),
            attempts=[ExecutionRecord.from_dict(a) for a in d.get("attempts") or ()],
            children=[cls.from_dict(c) for c in d.get("children") or ()],
            output=AgentOutput(o["status"], o["output"], o["error_information"]) if o else None,
            error_information=d.get("error_information", ""),
            warnings=list(d.get("warnings") or ()),
            decomposition=list(d.get("decomposition") or ()),
            coverage=d.get("coverage"),
            route=d.get("route"),
        )


def dumps_tree(rec: TaskRecord | None, *, wall: bool = False) -> str:
    """Canonical JSON text of a record tree; wall-clock fields dropped by default."""
    data = rec.to_dict(wall) if rec is not None else None
    return json.dumps(data, ensure_ascii=False, sort_keys=True, indent=1)
