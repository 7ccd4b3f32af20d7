"""Recursive agent-as-a-tool execution.

A task is routed to an agent. Planners decompose it into at most ``k_max``
sub-tasks, delegate each to one of their children, and merge the accepted
child results; functional agents perform the task directly. Every output goes
through :func:`~agentdag.audit.validate` and the verify-only
:func:`~agentdag.audit.judge` before it may propagate upward; rejected outputs
are retried with the reasons fed back into the agent's context.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .audit import QualityLedger, attempt_quality, judge, validate
from .config import RunConfig
from .context import (
    ExecutionContext,
    HistoryLog,
    InteractionRecord,
    RecordKind,
    StackFrame,
    _fit,
    append_interaction,
    build_context,
    measure,
)
from .errors import (
    BudgetImpossible,
    ContractViolation,
    DanglingAddress,
    DepthExceeded,
    EmptyDecomposition,
    ExecutorFailure,
    ExecutorTimeout,
    InvalidRole,
    NoCandidate,
    ToolNotPermitted,
    VerifyOnlyViolation,
)
from .graph import AgentGraph, AgentNode, Role
from .protocol import AgentOutput, Action, format_ref, inline_text, render_request
from .records import ExecutionRecord, Task, TaskRecord, TaskStatus
from .router import route, route_among
from .text import token_gaps
from .tools import Toolbox
from .workspace import Message, Workspace, normalize_address

logger = logging.getLogger(__name__)

__all__ = [
    "AgentOutput",
    "CoverageVerdict",
    "Orchestrator",
    "RunResult",
    "Task",
    "check_coverage",
    "decompose",
    "execute",
    "merge_results",
]


@dataclass(frozen=True)
class CoverageVerdict:
    covered: bool
    gaps: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"covered": self.covered, "gaps": list(self.gaps)}


@dataclass
class RunResult:
    root: TaskRecord
    workspace: Workspace
    history: HistoryLog
    ledger: QualityLedger
    wall_time: float = 0.0

    @property
    def succeeded(self) -> bool:
        return self.root.succeeded

    @property
    def output(self) -> AgentOutput:
        if self.root.output is not None:
            return self.root.output
        return AgentOutput.failure(self.root.error_information or "run failed")

    def context_sizes(self) -> list[int]:
        return [a.context_size for r in self.root.walk_post() for a in r.attempts]


def _parse_subtasks(text: str) -> list[dict]:
    try:
        items = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ContractViolation(f"decomposition is not a JSON array: {exc}") from None
    if not isinstance(items, list):
        raise ContractViolation("decomposition must be a JSON array")
    out = []
    for item in items:
        if isinstance(item, str):
            item = {"task": item}
        if not isinstance(item, dict) or not str(item.get("task", "")).strip():
            raise ContractViolation(f"bad sub-task entry {item!r}")
        out.append(item)
    return out


def decompose(
    task: Task,
    agent: AgentNode,
    ctx: ExecutionContext | None,
    exec,
    cfg: RunConfig | None = None,
    *,
    k_max: int | None = None,
    warnings: list[str] | None = None,
) -> list[Task]:
    """Ask ``agent``'s executor to split ``task`` into 1..k_max sub-tasks.

    Proposals longer than ``k_max`` are re-requested once, then truncated with
    a warning appended to ``warnings``.
    """
    cfg = cfg or RunConfig()
    k_max = k_max or cfg.k_max
    warnings = warnings if warnings is not None else []
    if agent.role is not Role.PLANNER:
        raise InvalidRole(f"only planners decompose; {agent.id!r} is {agent.role.value}")
    if task.status is not TaskStatus.RUNNING:
        raise ValueError(f"task {task.id} must be running to decompose")
    if task.depth + 1 > cfg.max_depth:
        raise DepthExceeded(f"sub-tasks of {task.id} would sit at depth {task.depth + 1} > {cfg.max_depth}")

    def ask(round_: int) -> list[dict]:
        request = render_request(
            Action.DECOMPOSE,
            task_id=task.id,
            task=task.description,
            k_max=k_max,
            round=round_,
            attempt=1,
            children=list(agent.children),
        )
        try:
            out = exec.invoke(agent.system_prompt, ctx, request)
        except ContractViolation as exc:
            raise ExecutorFailure(f"contract violation: {exc}") from exc
        if not out.ok:
            raise ExecutorFailure(out.error_information)
        try:
            return _parse_subtasks(out.output)
        except ContractViolation as exc:
            raise ExecutorFailure(str(exc)) from exc

    items = ask(0)
    if len(items) > k_max:
        warnings.append(f"decomposition of {task.id} proposed {len(items)} > k_max={k_max}; re-requested")
        items = ask(1)
        if len(items) > k_max:
            warnings.append(f"decomposition of {task.id} truncated from {len(items)} to k_max={k_max}")
            items = items[:k_max]
    if not items:
        raise EmptyDecomposition(f"executor proposed no sub-tasks for {task.id}")
    subtasks = []
    for i, item in enumerate(items, 1):
        subtasks.append(
            Task(
                id=f"{task.id}.{i}",
                description=str(item["task"]).strip(),
                depth=task.depth + 1,
                parent=task.id,
                writes=tuple(item.get("writes") or ()),
                agent_hint=item.get("agent"),
            )
        )
    task.children = [s.id for s in subtasks]
    return subtasks


def check_coverage(task: Task, subtasks: list[Task], exec=None, ctx: ExecutionContext | None = None) -> CoverageVerdict:
    """Does the union of sub-tasks cover the parent?

    With an executor the question goes to a reviewer call; the deterministic
    backends answer it by token containment, which is also the fallback here.
    """
    if not subtasks:
        raise ValueError("coverage needs at least one sub-task")
    descriptions = [s.description for s in subtasks]
    if exec is None:
        gaps = token_gaps(task.description, descriptions)
        return CoverageVerdict(not gaps, gaps)
    request = render_request(Action.COVERAGE, task_id=task.id, task=task.description, subtasks=descriptions)
    try:
        out = exec.invoke("You review task decompositions.", ctx, request)
    except ContractViolation as exc:
        raise ExecutorFailure(f"coverage review broke the contract: {exc}") from exc
    if not out.ok:
        raise ExecutorFailure(out.error_information)
    text = out.output.strip()
    if text.lower().startswith("covered"):
        return CoverageVerdict(True, [])
    try:
        gaps = [str(g) for g in json.loads(text)]
    except (json.JSONDecodeError, TypeError):
        gaps = [text]
    return CoverageVerdict(not gaps, gaps)


def merge_results(
    task: Task,
    child_outputs: list[AgentOutput],
    exec,
    ctx: ExecutionContext | None = None,
    cfg: RunConfig | None = None,
    *,
    attempt: int = 1,
    role_prompt: str = "",
) -> AgentOutput:
    """Combine accepted child outputs into one output that references their artifacts.

    Child references missing from the executor's answer are appended, so the
    merged output always points at every child artifact. Raises
    :class:`ContractViolation` when there is nothing to merge or the answer
    inlines more than the descriptor limit.
    """
    cfg = cfg or RunConfig()
    if not child_outputs:
        raise ContractViolation(f"nothing to merge for {task.id}")
    if any(not o.ok for o in child_outputs):
        raise ValueError("merge requires every child to have succeeded")
    children = []
    all_refs: list[tuple[str, str]] = []
    for out in child_outputs:
        refs = out.refs()
        first = inline_text(out.output).splitlines()
        children.append({"refs": [list(r) for r in refs], "summary": first[0] if first else ""})
        for ref in refs:
            if ref[0] not in {a for a, _ in all_refs}:
                all_refs.append(ref)
    request = render_request(
        Action.MERGE, task_id=task.id, task=task.description, children=children, attempt=attempt
    )
    out = exec.invoke(role_prompt, ctx, request)
    if not out.ok:
        return out
    present = {a for a, _ in out.refs()}
    text = out.output
    missing = [format_ref(a, d) for a, d in all_refs if a not in present]
    if missing:
        text = text.rstrip("\n") + "\n" + "\n".join(missing)
    inline = inline_text(text)
    if len(inline) > cfg.descriptor_limit:
        raise ContractViolation(
            f"merged output inlines {len(inline)} chars, over the descriptor limit {cfg.descriptor_limit}"
        )
    return AgentOutput.success(text)


class _AttemptHistory:
    """Forwards to the run history while counting what one attempt added."""

    def __init__(self, hist: HistoryLog) -> None:
        self._hist = hist
        self.counter = hist.counter
        self.added = 0

    def append(self, kind: str, text: str) -> int:
        self.added += self.counter(text)
        return self._hist.append(kind, text)

    def record(self, rec: InteractionRecord) -> int:
        return self.append(rec.kind.value, rec.content)


def _conflict_groups(subtasks: list[Task]) -> list[list[int]]:
    """Indices of sibling tasks grouped so that tasks sharing a written address stay together."""
    parent = list(range(len(subtasks)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[str, int] = {}
    for i, task in enumerate(subtasks):
        for addr in task.writes:
            try:
                addr = normalize_address(addr)
            except Exception:
                continue
            if addr in owner:
                parent[find(i)] = find(owner[addr])
            else:
                owner[addr] = i
    groups: dict[int, list[int]] = {}
    for i in range(len(subtasks)):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


class Orchestrator:
    """Runs tasks over an agent graph with a given executor.

    Args:
        graph: The agent DAG; must not be mutated while running.
        exec: Executor backend.
        cfg: Run configuration.
        ws: Workspace for artifacts and inboxes (temporary if omitted).
        hist: Run history log (new if omitted).
    """

    def __init__(
        self,
        graph: AgentGraph,
        exec,
        cfg: RunConfig | None = None,
        ws: Workspace | None = None,
        *,
        hist: HistoryLog | None = None,
        ledger: QualityLedger | None = None,
    ) -> None:
        self.graph = graph
        self.exec = exec
        self.cfg = cfg or RunConfig(k_max=graph.k_max, max_depth=graph.max_depth)
        self.ws = ws or Workspace(descriptor_limit=self.cfg.descriptor_limit)
        self.hist = hist or HistoryLog()
        self.ledger = ledger or QualityLedger(self.cfg.alpha, self.cfg.q0)
        limit = max(1, min(self.cfg.max_parallel, int(getattr(exec, "concurrency_limit", 1) or 1)))
        self._slots = threading.BoundedSemaphore(limit)
        self._scripted = bool(getattr(exec, "scripted", False))
        self._summarizer = exec if getattr(exec, "summarizes", False) else None
        self.ws.register(*graph.nodes)

    @property
    def k_max(self) -> int:
        return min(self.graph.k_max, self.cfg.k_max)

    # -- public -----------------------------------------------------------

    def run(self, root: Task | str) -> RunResult:
        task = root if isinstance(root, Task) else Task("T0", root)
        if task.status is not TaskStatus.PENDING:
            raise ValueError("root task must be pending")
        started = time.monotonic()
        base_visible = frozenset(self.ws.descriptors())
        try:
            rr = route(task, self.graph, floor=self.cfg.route_floor)
        except NoCandidate as exc:
            rec = TaskRecord(task, "-", "none")
            task.status = TaskStatus.FAILED
            rec.status = TaskStatus.FAILED
            rec.error_information = f"{task.id}: routing failure: {exc}"
            rec.output = AgentOutput.failure(rec.error_information)
            return RunResult(rec, self.ws, self.hist, self.ledger, time.monotonic() - started)
        rec = self._run_task(task, rr.target, [], base_visible)
        rec.route = rr.to_dict()
        # Quality updates are applied after the fact in post-order so that the
        # ledger does not depend on thread scheduling.
        for node in rec.walk_post():
            for att in node.attempts:
                self.ledger.update(att.agent_id, attempt_quality(att))
        return RunResult(rec, self.ws, self.hist, self.ledger, time.monotonic() - started)

    # -- internals --------------------------------------------------------

    def _context(self, node: AgentNode, stack: list[StackFrame], visible) -> ExecutionContext:
        return build_context(node, self.ws, stack, self.cfg, visible=visible)

    def _invoke(self, fn, task_id: str, attempt: int):
        with self._slots:
            if self.cfg.jitter_ms:
                rng = random.Random(f"{self.cfg.seed}:{task_id}:{attempt}")
                time.sleep(rng.uniform(0, self.cfg.jitter_ms) / 1000.0)
            return fn()

    def _fail(self, rec: TaskRecord, reason: str) -> TaskRecord:
        rec.status = TaskStatus.FAILED
        rec.task.status = TaskStatus.FAILED
        rec.error_information = reason
        rec.output = AgentOutput.failure(reason)
        return rec

    def _run_task(self, task: Task, agent_id: str, parent_stack: list[StackFrame], visible: frozenset) -> TaskRecord:
        node = self.graph[agent_id]
        task.status = TaskStatus.RUNNING
        stack = parent_stack + [StackFrame(agent_id, f"{node.role.value} for {task.id}")]
        rec = TaskRecord(task, agent_id, node.role.value, status=TaskStatus.RUNNING)
        started = time.monotonic()

        if node.role is Role.PLANNER:
            return self._run_planner(rec, node, stack, visible, started)

        def atom(ctx: ExecutionContext, attempt: int) -> AgentOutput:
            request = render_request(
                Action.EXECUTE,
                task_id=task.id,
                task=task.description,
                writes=list(task.writes),
                attempt=attempt,
            )
            ctx.tools.last_request = request
            return self.exec.invoke(node.system_prompt, ctx, request)

        return self._attempts(rec, node, stack, visible, atom, started)

    def _run_planner(self, rec, node, stack, visible, started) -> TaskRecord:
        task = rec.task
        try:
            ctx = self._context(node, stack, visible)
        except BudgetImpossible as exc:
            return self._fail(rec, f"{task.id} [{node.id}] context budget: {exc}")
        try:
            subtasks = self._invoke(
                lambda: decompose(task, node, ctx, self.exec, self.cfg, k_max=self.k_max, warnings=rec.warnings),
                task.id,
                0,
            )
        except (DepthExceeded, EmptyDecomposition, ExecutorFailure, InvalidRole) as exc:
            return self._fail(rec, f"{task.id} [{node.id}] decomposition failed: {type(exc).__name__}: {exc}")
        rec.decomposition = [s.description for s in subtasks]
        self.hist.append("decomposition", json.dumps(rec.decomposition))

        try:
            cov = self._invoke(lambda: check_coverage(task, subtasks, self.exec, ctx), task.id, 0)
        except ExecutorFailure as exc:
            cov = CoverageVerdict(False, [f"coverage review unavailable: {exc}"])
        rec.coverage = {**cov.to_dict(), "advisory": not self.cfg.strict_coverage}
        if not cov.covered and self.cfg.strict_coverage:
            return self._fail(rec, f"{task.id} [{node.id}] decomposition leaves gaps: {', '.join(cov.gaps)}")

        assignments = []
        for sub in subtasks:
            if sub.agent_hint:
                if sub.agent_hint not in node.children:
                    return self._fail(
                        rec, f"{task.id} [{node.id}] routing failure: {sub.agent_hint!r} is not a child of {node.id!r}"
                    )
                assignments.append(sub.agent_hint)
                continue
            target = route_among(sub, self.graph, list(node.children))
            if target is None:
                return self._fail(
                    rec, f"{task.id} [{node.id}] routing failure: no child of {node.id!r} matches {sub.description!r}"
                )
            assignments.append(target)

        rec.children = self._run_children(subtasks, assignments, stack, visible)
        failed = [c for c in rec.children if not c.succeeded]
        if failed:
            first = failed[0]
            chain = f"{task.id} [{node.id}] failed: sub-task {first.task.id} failed\n  caused by: "
            chain += first.error_information.replace("\n", "\n  ")
            if len(failed) > 1:
                chain += f"\n  ({len(failed) - 1} more failed sub-task(s): {', '.join(c.task.id for c in failed[1:])})"
            return self._fail(rec, chain)

        child_outputs = [c.output for c in rec.children]
        merged_visible = set(visible)
        for child in rec.children:
            for addr, desc in child.output.refs():
                addr = normalize_address(addr)
                merged_visible.add(addr)
                try:
                    self.ws.send(Message(child.agent_id, node.id, addr, self.ws.descriptor(addr)))
                except DanglingAddress:  # pragma: no cover - validate() already rejects these
                    pass
        merged_visible = frozenset(merged_visible)

        def merge(ctx: ExecutionContext, attempt: int) -> AgentOutput:
            return merge_results(
                task, child_outputs, self.exec, ctx, self.cfg, attempt=attempt, role_prompt=node.system_prompt
            )

        return self._attempts(rec, node, stack, merged_visible, merge, started)

    def _run_children(self, subtasks, assignments, stack, visible) -> list[TaskRecord]:
        results: list[TaskRecord | None] = [None] * len(subtasks)

        def run_group(indices: list[int]) -> None:
            for i in indices:
                results[i] = self._run_task(subtasks[i], assignments[i], stack, visible)

        groups = _conflict_groups(subtasks)
        if self.cfg.max_parallel <= 1 or len(groups) <= 1:
            for group in groups:
                run_group(group)
        else:
            with ThreadPoolExecutor(max_workers=min(len(groups), self.cfg.max_parallel)) as pool:
                for fut in [pool.submit(run_group, g) for g in groups]:
                    fut.result()
        return [r for r in results if r is not None]

    def _attempts(self, rec: TaskRecord, node: AgentNode, stack, visible, produce, started) -> TaskRecord:
        task = rec.task
        try:
            ctx = self._context(node, stack, visible)
        except BudgetImpossible as exc:
            return self._fail(rec, f"{task.id} [{node.id}] context budget: {exc}")
        last_reason = ""
        for attempt in range(1, self.cfg.retries + 2):
            if not self._scripted and time.monotonic() - started > self.cfg.task_timeout:
                return self._fail(rec, f"{task.id} [{node.id}] timeout: exceeded {self.cfg.task_timeout}s")
            ahist = _AttemptHistory(self.hist)
            ctx.tools = Toolbox(self.ws, node.id, node.tool_names or frozenset(), ctx, ahist)
            t0 = time.time()
            validation = judged = None
            try:
                out = self._invoke(lambda: produce(ctx, attempt), task.id, attempt)
            except ExecutorTimeout as exc:
                out = AgentOutput.failure(f"timeout: {exc}")
            except ContractViolation as exc:
                out = AgentOutput.failure(f"contract violation: {exc}")
            except (ExecutorFailure, BudgetImpossible, ToolNotPermitted, VerifyOnlyViolation) as exc:
                out = AgentOutput.failure(f"{type(exc).__name__}: {exc}")
            ahist.append("request", ctx.sys + "\n" + ctx.render(ctx.tools.last_request))
            ahist.append("output", out.to_json())

            if not out.ok:
                verdict = "failed"
                reason = out.error_information
            else:
                v = self._invoke(lambda: validate(out, task, self.ws, self.exec, self.cfg), task.id, attempt)
                validation = v.to_dict()
                if not v.accepted:
                    verdict, reason = "rejected", "; ".join(v.findings)
                else:
                    try:
                        j = self._invoke(
                            lambda: judge(task, out, self.ws, self.exec, self.cfg, hist=ahist), task.id, attempt
                        )
                    except VerifyOnlyViolation as exc:
                        j = None
                        judged = {"verdict": "error", "findings": [f"verify-only violation: {exc}"]}
                    if j is not None:
                        judged = j.to_dict()
                    if judged["verdict"] == "success":
                        verdict, reason = "accepted", ""
                    else:
                        verdict, reason = "rejected", "; ".join(judged["findings"])

            rec.attempts.append(
                ExecutionRecord(
                    task_id=task.id,
                    agent_id=node.id,
                    attempt=attempt,
                    output=out,
                    verdict=verdict,
                    validation=validation,
                    judge=judged,
                    context_size=measure(ctx),
                    history_delta=ahist.added,
                    stack=[f.agent for f in stack],
                    started_at=t0,
                    finished_at=time.time(),
                )
            )
            self._dump_context(ctx, task.id, attempt)
            if verdict == "accepted":
                rec.status = TaskStatus.SUCCEEDED
                task.status = TaskStatus.SUCCEEDED
                rec.output = out
                return rec
            last_reason = reason or "rejected"
            feedback = f"attempt {attempt} {verdict}: {last_reason}"
            try:
                append_interaction(
                    ctx,
                    InteractionRecord(RecordKind.FEEDBACK, _fit(feedback, max(ctx.env_limit(), 1), ctx.counter)),
                    ahist,
                )
            except BudgetImpossible:
                pass
        attempts = self.cfg.retries + 1
        return self._fail(rec, f"{task.id} [{node.id}] failed after {attempts} attempts: {last_reason}")

    def _dump_context(self, ctx: ExecutionContext, task_id: str, attempt: int) -> None:
        if not self.cfg.dump_context:
            return
        out = Path(self.ws.root) / "context"
        out.mkdir(exist_ok=True)
        (out / f"{task_id}.{attempt}.json").write_text(
            json.dumps(ctx.snapshot(), indent=1, sort_keys=True, ensure_ascii=False), encoding="utf-8"
        )


def execute(
    root: Task | str,
    graph: AgentGraph,
    exec,
    cfg: RunConfig | None = None,
    ws: Workspace | None = None,
    **kwargs,
) -> RunResult:
    """Route ``root`` into ``graph`` and run the full decompose/delegate/merge lifecycle."""
    return Orchestrator(graph, exec, cfg, ws, **kwargs).run(root)
