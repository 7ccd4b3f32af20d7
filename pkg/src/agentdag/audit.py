"""Execution-level and system-level audit.

Execution level: :func:`validate` scores each output (structural checks plus a
semantic judgment) and :func:`update_quality` folds the score into a per-agent
exponential moving average. A verify-only :func:`judge` gates propagation.
System level: :func:`system_audit` summarizes finished runs and flags
anomalies.
"""

from __future__ import annotations

import logging
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any

from .config import RunConfig
from .context import ExecutionContext, InteractionRecord, RecordKind, compress
from .errors import ContractViolation, ExecutorFailure, OutOfRange
from .protocol import AgentOutput, Action, inline_text, render_request
from .records import Task, TaskRecord
from .tools import Toolbox
from .workspace import ReadOnlyWorkspace, Workspace, normalize_address

logger = logging.getLogger(__name__)

JUDGE_PROMPT = (
    "You are the judge. Check whether the reported result meets the task's own requirements. "
    "Inspect files read-only; never perform the task and never write anything. "
    "Matching file names and output format matter more than anything else."
)
JUDGE_TOOLS = frozenset({"file_read", "dir_list", "execute_code"})


@dataclass
class ValidationResult:
    score: float
    verdict: str  # success | error
    findings: list[str] = field(default_factory=list)
    structural: float = 1.0
    semantic: float = 1.0
    flags: list[str] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.verdict == "success"

    def to_dict(self) -> dict[str, Any]:
        return {
            "score": round(self.score, 12),
            "verdict": self.verdict,
            "findings": list(self.findings),
            "structural": round(self.structural, 12),
            "semantic": round(self.semantic, 12),
            "flags": list(self.flags),
        }


class QualityLedger:
    """Per-agent quality scores maintained as an exponential moving average."""

    def __init__(self, alpha: float = 0.9, q0: float = 0.5) -> None:
        if not 0.0 <= alpha <= 1.0 or not 0.0 <= q0 <= 1.0:
            raise OutOfRange("alpha and q0 must lie in [0, 1]")
        self.alpha = alpha
        self.q0 = q0
        self.scores: dict[str, float] = {}
        self.history: dict[str, list[tuple[int, float, float]]] = defaultdict(list)
        self._clock = 0
        self._locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._guard = threading.Lock()

    def score(self, agent: str) -> float:
        return self.scores.get(agent, self.q0)

    def observations(self, agent: str) -> int:
        return len(self.history.get(agent, ()))

    def update(self, agent: str, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise OutOfRange(f"validate score {v} outside [0, 1]")
        with self._guard:
            lock = self._locks[agent]
        with lock:
            prev = self.scores.get(agent, self.q0)
            new = self.alpha * prev + (1.0 - self.alpha) * v
            # Guard against rounding drifting a hair outside the hull.
            new = min(max(new, min(prev, v)), max(prev, v))
            self.scores[agent] = new
            with self._guard:
                self._clock += 1
                t = self._clock
            self.history[agent].append((t, v, new))
            return new

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "q0": self.q0,
            "scores": {a: self.scores[a] for a in sorted(self.scores)},
            "observations": {a: len(self.history[a]) for a in sorted(self.history)},
        }


def update_quality(ledger: QualityLedger, agent: str, v: float) -> QualityLedger:
    ledger.update(agent, v)
    return ledger


def _semantic_score(exec, task: Task, output: AgentOutput) -> tuple[float, list[str]]:
    if exec is None:
        return 1.0, []
    request = render_request(Action.VALIDATE, task_id=task.id, task=task.description, output=output.to_dict())
    try:
        reply = exec.invoke("You grade agent outputs.", None, request)
        if not reply.ok:
            raise ExecutorFailure(reply.error_information)
        value = float(reply.output.strip())
    except (ExecutorFailure, ContractViolation, ValueError) as exc:
        return 0.0, [f"semantic check unavailable: {exc}"]
    return min(max(value, 0.0), 1.0), []


def validate(
    output: AgentOutput,
    task: Task,
    ws: Workspace | ReadOnlyWorkspace | None,
    exec=None,
    cfg: RunConfig | None = None,
) -> ValidationResult:
    """Score ``output`` as ``w * structural + (1 - w) * semantic``.

    Structural checks: contract consistency, every referenced address
    resolves, and no inline payload beyond the descriptor limit. A single
    failed structural check forces verdict ``error`` whatever the score.
    """
    cfg = cfg or RunConfig()
    checks: list[bool] = []
    findings: list[str] = []

    problems = output.contract_problems()
    if output.status == "error":
        problems.append(f"agent reported error: {output.error_information or '(empty)'}")
    checks.append(not problems)
    findings.extend(f"contract: {p}" for p in problems)

    dangling = []
    for addr, _ in output.refs():
        try:
            ok = ws is not None and ws.exists(normalize_address(addr))
        except Exception:
            ok = False
        if not ok:
            dangling.append(addr)
    checks.append(not dangling)
    findings.extend(f"dangling reference: {a}" for a in dangling)

    inline = inline_text(output.output)
    inline_ok = len(inline) <= cfg.descriptor_limit
    checks.append(inline_ok)
    if not inline_ok:
        findings.append(f"inline payload of {len(inline)} chars exceeds limit {cfg.descriptor_limit}")

    structural = sum(checks) / len(checks)
    semantic, flags = _semantic_score(exec, task, output)
    w = cfg.structural_weight
    score = w * structural + (1.0 - w) * semantic
    verdict = "success" if structural == 1.0 and score >= cfg.acceptance_threshold else "error"
    if verdict == "error" and structural == 1.0:
        findings.append(f"score {score:.3f} below acceptance threshold {cfg.acceptance_threshold}")
    return ValidationResult(score, verdict, findings, structural, semantic, flags)


def judge(
    task: Task,
    output: AgentOutput,
    ws: Workspace | ReadOnlyWorkspace,
    exec=None,
    cfg: RunConfig | None = None,
    *,
    hist=None,
) -> ValidationResult:
    """Verify-only review of a successful output.

    Deterministic checks run first: every claimed file must exist and every
    file the task declares it writes must be among the references. Then the
    executor's verdict is asked for with read-only tools. The judge never
    writes; attempts raise :class:`~agentdag.errors.VerifyOnlyViolation`.
    """
    if output.status != "success":
        raise ValueError("judge only reviews successful outputs; errors propagate directly")
    cfg = cfg or RunConfig()
    view = ws.read_only() if isinstance(ws, Workspace) else ws
    findings: list[str] = []

    refs = [a for a, _ in output.refs()]
    norm_refs = set()
    for addr in refs:
        try:
            norm = normalize_address(addr)
        except Exception:
            findings.append(f"claimed file {addr} is not a valid workspace path")
            continue
        norm_refs.add(norm)
        if not view.exists(norm):
            findings.append(f"claimed file {addr} does not exist")
    for expected in task.writes:
        norm = normalize_address(expected)
        if norm not in norm_refs or not view.exists(norm):
            findings.append(f"format: expected file {expected} was not produced")
    if findings:
        return ValidationResult(0.0, "error", findings, structural=0.0, semantic=0.0)

    if exec is None:
        return ValidationResult(1.0, "success", [], 1.0, 1.0)
    ctx = ExecutionContext(sys=JUDGE_PROMPT, token_budget=cfg.token_budget, tau=cfg.tau)
    ctx.tools = Toolbox(view, "judge", JUDGE_TOOLS, ctx, hist)
    request = render_request(
        Action.JUDGE, task_id=task.id, task=task.description, writes=list(task.writes), output=output.to_dict()
    )
    try:
        reply = exec.invoke(JUDGE_PROMPT, ctx, request)
    except (ExecutorFailure, ContractViolation) as exc:
        if cfg.strict_judge:
            return ValidationResult(0.0, "error", [f"judge unavailable: {exc}"], flags=["judge-unavailable"])
        return ValidationResult(1.0, "success", [], flags=[f"judge-unavailable: {exc}"])
    if reply.ok:
        return ValidationResult(1.0, "success", [], 1.0, 1.0)
    return ValidationResult(0.0, "error", [f"judge: {reply.error_information}"], 1.0, 0.0)


# -- system level -----------------------------------------------------------


@dataclass
class Anomaly:
    kind: str
    agent: str
    detail: str
    tasks: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "agent": self.agent, "detail": self.detail, "tasks": list(self.tasks)}


@dataclass
class SystemAuditReport:
    summaries: dict[str, str] = field(default_factory=dict)
    anomalies: list[Anomaly] = field(default_factory=list)
    history_size: int = 0
    final_context_size: int = 0
    savings_ratio: float | None = None
    quality: dict[str, float] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.summaries and not self.anomalies

    def to_dict(self) -> dict[str, Any]:
        return {
            "summaries": dict(self.summaries),
            "anomalies": [a.to_dict() for a in self.anomalies],
            "history_size": self.history_size,
            "final_context_size": self.final_context_size,
            "savings_ratio": self.savings_ratio,
            "quality": {a: round(q, 12) for a, q in sorted(self.quality.items())},
        }


def _outcome_line(rec: TaskRecord) -> str:
    if rec.succeeded and rec.output is not None:
        first = rec.output.output.strip().splitlines()
        return f"{rec.task.id} [{rec.agent_id}] ok: {first[0] if first else ''}"
    reason = rec.error_information.strip().splitlines()
    return f"{rec.task.id} [{rec.agent_id}] failed: {reason[0] if reason else ''}"


def attempt_quality(att) -> float:
    """Value folded into the quality EMA for one attempt.

    Failed attempts count as 0; a judge rejection caps the validate score.
    """
    if att.validation is None:
        return 0.0
    v = float(att.validation["score"])
    if att.judge is not None and att.judge.get("verdict") != "success":
        v = min(v, float(att.judge.get("score", 0.0)))
    return min(max(v, 0.0), 1.0)


def replay_quality(root: TaskRecord, cfg: RunConfig) -> QualityLedger:
    """Rebuild the quality ledger from a record tree, attempts in post-order."""
    ledger = QualityLedger(cfg.alpha, cfg.q0)
    for rec in root.walk_post():
        for att in rec.attempts:
            ledger.update(att.agent_id, attempt_quality(att))
    return ledger


def system_audit(
    records: TaskRecord | list[TaskRecord] | None,
    ctx_snapshots: list[int] | None = None,
    exec=None,
    cfg: RunConfig | None = None,
    *,
    history_size: int | None = None,
    ledger: QualityLedger | None = None,
) -> SystemAuditReport:
    """Retrospective review of a finished run.

    Args:
        records: Root of the record tree, a list of roots (several runs in
            order), or ``None`` for an empty run.
        ctx_snapshots: Context sizes per step; the last one is the final size.
        exec: Optional summarizer; the deterministic summary is used otherwise.
        history_size: Size of the run's full history; derived from the
            records when omitted.
        ledger: Quality ledger; replayed from the records when omitted.
    """
    cfg = cfg or RunConfig()
    report = SystemAuditReport()
    if records is None:
        return report
    roots = list(records) if isinstance(records, (list, tuple)) else [records]
    if not roots:
        return report

    def walk():
        for root in roots:
            yield from root.walk()

    def walk_post():
        for root in roots:
            yield from root.walk_post()

    for rec in walk():
        if not rec.children:
            continue
        lines = [
            InteractionRecord(RecordKind.TOOL_RESULT, _outcome_line(r))
            for r in rec.walk()
        ]
        summary = compress(lines, exec, fraction=cfg.compress_fraction, floor=cfg.compress_floor)
        report.summaries[rec.task.id] = summary.content
    if not report.summaries:
        for root in roots:
            report.summaries[root.task.id] = _outcome_line(root)

    # Consecutive rejected attempts per agent, in execution (post-)order.
    streak: dict[str, list[str]] = defaultdict(list)
    reported: dict[str, Anomaly] = {}
    for rec in walk_post():
        for att in rec.attempts:
            agent = att.agent_id
            if att.verdict == "accepted":
                streak[agent] = []
                reported.pop(agent, None)
                continue
            streak[agent].append(att.task_id)
            run = streak[agent]
            if len(run) >= cfg.anomaly_rejections:
                if agent in reported:
                    reported[agent].detail = f"{len(run)} consecutive rejections"
                    reported[agent].tasks = list(run)
                else:
                    reported[agent] = Anomaly(
                        "repeated_rejections", agent, f"{len(run)} consecutive rejections", list(run)
                    )
                    report.anomalies.append(reported[agent])

    if ledger is None:
        ledger = QualityLedger(cfg.alpha, cfg.q0)
        for root in roots:
            for rec in root.walk_post():
                for att in rec.attempts:
                    ledger.update(att.agent_id, attempt_quality(att))
    for agent in sorted(ledger.history):
        peak = ledger.q0
        for _, _, q in ledger.history[agent]:
            peak = max(peak, q)
            if peak - q > cfg.anomaly_quality_drop:
                report.anomalies.append(
                    Anomaly("quality_drop", agent, f"quality fell from {peak:.3f} to {q:.3f}")
                )
                break
    report.quality = dict(ledger.scores)

    if history_size is None:
        history_size = sum(a.history_delta for r in walk() for a in r.attempts)
    report.history_size = history_size
    sizes = ctx_snapshots
    if sizes is None:
        sizes = [a.context_size for r in walk_post() for a in r.attempts]
    report.final_context_size = sizes[-1] if sizes else 0
    if report.final_context_size > 0:
        report.savings_ratio = history_size / report.final_context_size
    return report
