"""End-to-end runs, long-run context experiments and the evolution loop.

A run directory looks like::

    <run>/artifacts/... inbox/... index.jsonl   workspace
    <run>/records.json      record trees, canonical JSON (no wall-clock fields)
    <run>/records.jsonl     one line per attempt
    <run>/metrics.json      derived metrics (no wall-clock fields)
    <run>/timing.json       wall-clock figures
    <run>/audit.yaml        system audit report
    <run>/history.jsonl     full uncompressed interaction history
    <run>/config.yaml, graph.yaml
    <run>/context/          per-attempt context snapshots (dump_context)
    <run>/evolution/        dataset.jsonl, main.jsonl, lineage-<round>.json, graph-<round>.yaml
"""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..audit import QualityLedger, SystemAuditReport, system_audit
from ..config import RunConfig
from ..context import (
    HistoryLog,
    InteractionRecord,
    RecordKind,
    append_interaction,
    build_context,
    measure,
)
from ..evolution import (
    Backend,
    Branch,
    MainBranch,
    RecordingTrainHook,
    TrainingDataset,
    accumulate_training_data,
    merge,
    pressure_from_records,
    prune_branches,
    restructure,
    spawn_branches,
)
from ..graph import AgentGraph, AgentNode, CapabilityDescriptor, Role, save_graph
from ..orchestrator import Orchestrator
from ..records import Task, TaskRecord, dumps_tree
from ..workspace import Workspace
from .executors import ScriptedExecutor
from .metrics import Metrics
from .scenario import Scenario

logger = logging.getLogger(__name__)


@dataclass
class SimulationResult:
    metrics: Metrics
    records: list[TaskRecord]
    audit: SystemAuditReport
    run_dir: Path | None = None
    ledger: QualityLedger | None = None

    @property
    def succeeded(self) -> bool:
        return all(r.succeeded for r in self.records)

    def records_json(self) -> str:
        return "[\n" + ",\n".join(dumps_tree(r) for r in self.records) + "\n]\n"


def _task_specs(scenario: Scenario) -> list[dict[str, Any]]:
    if not scenario.tasks:
        raise ValueError(f"scenario {scenario.name!r} lists no tasks")
    specs = []
    for t in scenario.tasks:
        specs.append({"task": t} if isinstance(t, str) else dict(t))
    return specs


def _root_task(spec: dict[str, Any], task_id: str) -> Task:
    return Task(task_id, str(spec["task"]), writes=tuple(spec.get("writes") or ()))


def write_run(
    run_dir: Path,
    records: list[TaskRecord],
    metrics: Metrics,
    report: SystemAuditReport,
    *,
    history: HistoryLog | None = None,
    cfg: RunConfig | None = None,
    graph: AgentGraph | None = None,
) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    text = "[\n" + ",\n".join(dumps_tree(r) for r in records) + "\n]\n"
    (run_dir / "records.json").write_text(text, encoding="utf-8")
    with open(run_dir / "records.jsonl", "w", encoding="utf-8") as fh:
        for root in records:
            for rec in root.walk_post():
                for att in rec.attempts:
                    fh.write(json.dumps(att.to_dict(wall=False), sort_keys=True, ensure_ascii=False) + "\n")
    (run_dir / "metrics.json").write_text(metrics.dumps() + "\n", encoding="utf-8")
    (run_dir / "timing.json").write_text(
        json.dumps({"wall_time": metrics.wall_time}, indent=1) + "\n", encoding="utf-8"
    )
    write_audit(run_dir, report)
    if history is not None:
        with open(run_dir / "history.jsonl", "w", encoding="utf-8") as fh:
            for kind, entry in history.entries():
                fh.write(json.dumps({"kind": kind, "text": entry}, ensure_ascii=False) + "\n")
    if cfg is not None:
        cfg.save(run_dir / "config.yaml")
    if graph is not None:
        save_graph(graph, run_dir / "graph.yaml")


def write_audit(run_dir: Path, report: SystemAuditReport) -> Path:
    path = run_dir / "audit.yaml"
    path.write_text(yaml.safe_dump(report.to_dict(), sort_keys=False, allow_unicode=True), encoding="utf-8")
    return path


def load_records(run_dir: str | Path) -> list[TaskRecord]:
    data = json.loads((Path(run_dir) / "records.json").read_text(encoding="utf-8"))
    return [TaskRecord.from_dict(d) for d in data]


def simulate(
    cfg: RunConfig,
    graph: AgentGraph,
    scenario: Scenario,
    rounds: int = 1,
    run_dir: str | Path | None = None,
    *,
    executor=None,
) -> SimulationResult:
    """Run every scenario task ``rounds`` times against one shared workspace.

    Root task ids are ``R<round>.T<index>``. With ``run_dir`` the run is
    written out in the layout described in the module docstring.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    specs = _task_specs(scenario)
    executor = executor or ScriptedExecutor(scenario)
    run_dir = Path(run_dir) if run_dir is not None else None
    ws = Workspace(run_dir, descriptor_limit=cfg.descriptor_limit) if run_dir else Workspace(descriptor_limit=cfg.descriptor_limit)
    hist = HistoryLog()
    ledger = QualityLedger(cfg.alpha, cfg.q0)
    orch = Orchestrator(graph, executor, cfg, ws, hist=hist, ledger=ledger)
    records = []
    started = time.monotonic()
    for r in range(rounds):
        for i, spec in enumerate(specs):
            result = orch.run(_root_task(spec, f"R{r}.T{i}"))
            records.append(result.root)
    wall = time.monotonic() - started
    metrics = Metrics.from_records(
        records, token_budget=cfg.token_budget, tokens=int(getattr(executor, "tokens_used", 0)), wall_time=wall
    )
    report = system_audit(
        records,
        metrics.context_sizes,
        cfg=cfg,
        history_size=metrics.history_sizes[-1] if metrics.history_sizes else 0,
        ledger=ledger,
    )
    if run_dir is not None:
        write_run(run_dir, records, metrics, report, history=hist, cfg=cfg, graph=graph)
    return SimulationResult(metrics, records, report, run_dir, ledger)


# -- long-run context boundedness ------------------------------------------


@dataclass
class LongRun:
    context_sizes: list[int] = field(default_factory=list)
    history_sizes: list[int] = field(default_factory=list)
    env_sizes: list[int] = field(default_factory=list)
    env_limits: list[int] = field(default_factory=list)
    compressions: int = 0
    token_budget: int = 0
    tau: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "token_budget": self.token_budget,
            "tau": self.tau,
            "compressions": self.compressions,
            "context_sizes": self.context_sizes,
            "history_sizes": self.history_sizes,
            "env_sizes": self.env_sizes,
        }


def long_run(
    cfg: RunConfig,
    steps: int = 1000,
    *,
    executor=None,
    ws: Workspace | None = None,
    files: int = 40,
) -> LongRun:
    """Feed ``steps`` scripted tool interactions through one agent context.

    Each step appends a tool call and a tool result of seeded pseudo-random
    size; sizes of the context, history and interaction log are recorded
    after every step.
    """
    rng = random.Random(cfg.seed)
    ws = ws or Workspace(descriptor_limit=cfg.descriptor_limit)
    for i in range(files):
        ws.put(f"data/part-{i:03d}.txt", f"chunk {i}\n".encode() * (i + 1), f"raw data chunk {i}")
    agent = AgentNode("worker", Role.FUNCTIONAL, CapabilityDescriptor("long-running worker", frozenset({"work"})))
    ctx = build_context(agent, ws, [], cfg)
    hist = HistoryLog(ctx.counter)
    hist.append("system", ctx.sys)
    out = LongRun(token_budget=cfg.token_budget, tau=ctx.tau)
    limit = ctx.env_limit()
    for step in range(steps):
        call = f"file_read data/part-{step % max(files, 1):03d}.txt"
        size = rng.randint(limit // 16 + 1, max(limit // 3, limit // 16 + 2))
        body = f"step {step}: " + "".join(rng.choice("abcdefghij ") for _ in range(size * 4))
        for rec in (
            InteractionRecord(RecordKind.TOOL_CALL, call, "file_read"),
            InteractionRecord(RecordKind.TOOL_RESULT, body[: max(limit - 1, 1) * 4], "file_read"),
        ):
            before = len(ctx.env_log)
            append_interaction(ctx, rec, hist, executor)
            if len(ctx.env_log) <= before:
                out.compressions += 1
        out.context_sizes.append(measure(ctx))
        out.history_sizes.append(hist.size)
        out.env_sizes.append(ctx.env_size())
        out.env_limits.append(ctx.env_limit())
    return out


# -- evolution ---------------------------------------------------------------


@dataclass
class EvolutionResult:
    main: MainBranch
    graph: AgentGraph
    branches: list[Branch]
    pruned: list[str]
    lineage: list[dict[str, Any]]
    dataset: TrainingDataset
    ledger: QualityLedger
    run_dir: Path | None = None


def scenario_backends(scenario: Scenario) -> list[Backend]:
    """One scripted backend per ``backends`` entry; a single default backend otherwise."""
    if not scenario.backends:
        return [Backend("main", ScriptedExecutor(scenario))]
    out = []
    for b in scenario.backends:
        out.append(Backend(str(b["id"]), ScriptedExecutor(scenario.with_overrides(b.get("entries") or []))))
    return out


def evolve(
    cfg: RunConfig,
    graph: AgentGraph,
    scenario: Scenario,
    rounds: int = 1,
    run_dir: str | Path | None = None,
    *,
    backends: list[Backend] | None = None,
    hook=None,
    clock=time.monotonic,
) -> EvolutionResult:
    """Branch, judge, merge, prune and restructure for ``rounds`` rounds.

    With ``cfg.judge_mode == "per_task"`` deltas merge as each task finishes;
    in ``"timer"`` mode they are buffered and merged whenever
    ``cfg.judge_interval`` seconds have passed, and at the end of each round.
    """
    specs = _task_specs(scenario)
    active = list(backends or scenario_backends(scenario))
    root = Path(run_dir) if run_dir is not None else Path(Workspace().root)
    evo = root / "evolution"
    evo.mkdir(parents=True, exist_ok=True)
    main = MainBranch(archive=Workspace(evo / "main", descriptor_limit=cfg.descriptor_limit))
    ledger = QualityLedger(cfg.alpha, cfg.q0)
    hook = hook or RecordingTrainHook()
    lineage: list[dict[str, Any]] = []
    pruned: list[str] = []
    branches: dict[str, Branch] = {}
    pending = []
    last_merge = clock()

    for r in range(rounds):
        records: list[TaskRecord] = []
        for i, spec in enumerate(specs):
            task = _root_task(spec, f"R{r}.T{i}")
            ws = Workspace(evo / f"round-{r}" / f"task-{i}", descriptor_limit=cfg.descriptor_limit)
            for br in spawn_branches(task, active, graph, cfg, ws, ledger=ledger):
                known = branches.setdefault(br.id, Branch(br.id, br.model_ref, br.executor))
                known.deltas.extend(br.deltas)
                known.records.extend(br.records)
                known.quality = br.quality
                records.extend(br.records)
                pending.extend(br.deltas)
            if cfg.judge_mode == "per_task" or clock() - last_merge >= cfg.judge_interval:
                merge(main, pending)
                pending, last_merge = [], clock()
        if pending:
            merge(main, pending)
            pending, last_merge = [], clock()

        kept, dropped = prune_branches([branches[b.id] for b in active], ledger, cfg)
        keep_ids = {b.id for b in kept}
        pruned.extend(b.id for b in dropped)
        active = [b for b in active if b.id in keep_ids]

        report = restructure(graph, None, cfg, pressure_from_records(records))
        graph = report.graph
        lineage.append(report.lineage())
        (evo / f"lineage-{r}.json").write_text(json.dumps(report.lineage(), indent=1, sort_keys=True) + "\n")
        save_graph(graph, evo / f"graph-{r}.yaml")

    with open(evo / "main.jsonl", "w", encoding="utf-8") as fh:
        for d in main.deltas:
            fh.write(json.dumps(d.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    dataset = accumulate_training_data(main, evo / "dataset.jsonl", hook=hook)
    return EvolutionResult(
        main,
        graph,
        [branches[b.id] for b in active],
        pruned,
        lineage,
        dataset,
        ledger,
        Path(run_dir) if run_dir is not None else None,
    )
