"""Branch-and-merge self-evolution.

Several executor backends attempt the same task on isolated workspace
sub-roots (branches). Only judge-accepted contributions (deltas) are merged
into the main branch, which doubles as the training-data repository. Weak
branches are pruned by their audit quality, and the agent topology is adapted
by fusing near-duplicate functional siblings and splitting planners that keep
running into the fan-out bound.
"""

from __future__ import annotations

import copy
import json
import logging
from collections import Counter
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .audit import QualityLedger, attempt_quality
from .config import RunConfig
from .errors import NoBackends, WouldViolateInvariant
from .graph import AgentGraph, AgentNode, CapabilityDescriptor, Role, validate_graph
from .orchestrator import execute
from .records import Task, TaskRecord
from .text import set_cosine
from .workspace import Workspace, normalize_address

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Backend:
    """A named executor backend competing for tasks."""

    id: str
    executor: Any


@dataclass
class Delta:
    """What one branch contributed for one task."""

    branch_id: str
    task_id: str
    refs: list[tuple[str, str]] = field(default_factory=list)
    verdict: str | None = None  # success | error | None (not yet judged)
    task: str = ""
    output: dict[str, Any] | None = None
    source: Workspace | None = field(default=None, repr=False, compare=False)

    @property
    def id(self) -> str:
        return f"{self.branch_id}:{self.task_id}"

    @property
    def accepted(self) -> bool:
        return self.verdict == "success"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "branch_id": self.branch_id,
            "task_id": self.task_id,
            "task": self.task,
            "refs": [list(r) for r in self.refs],
            "verdict": self.verdict,
            "output": self.output,
        }


@dataclass
class Branch:
    id: str
    model_ref: str
    executor: Any = field(default=None, repr=False)
    workspace: Workspace | None = field(default=None, repr=False)
    deltas: list[Delta] = field(default_factory=list)
    quality: float = 0.5
    records: list[TaskRecord] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class TrainingExample:
    delta_id: str
    task: str
    output: dict[str, Any]
    refs: tuple[tuple[str, str], ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "delta": self.delta_id,
            "task": self.task,
            "output": self.output,
            "refs": [list(r) for r in self.refs],
        }


@dataclass
class TrainingDataset:
    examples: list[TrainingExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(e.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"
            for e in self.examples
        )

    def export(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_jsonl().encode("utf-8"))
        return path


@dataclass
class MainBranch:
    """Accepted deltas, in merge order, plus an archive holding their artifacts."""

    deltas: list[Delta] = field(default_factory=list)
    rejected: list[Delta] = field(default_factory=list)
    dataset: TrainingDataset = field(default_factory=TrainingDataset)
    archive: Workspace = field(default_factory=Workspace, repr=False)

    def delta_ids(self) -> list[str]:
        return [d.id for d in self.deltas]


class RecordingTrainHook:
    """Default training hook: remembers what it would have trained on."""

    def __init__(self) -> None:
        self.calls: list[tuple[str, str]] = []

    def __call__(self, branch: Branch | None, dataset_file: Path) -> None:
        self.calls.append((branch.id if branch is not None else "", str(dataset_file)))
        logger.info("train hook: %s on %s", branch.id if branch else "-", dataset_file)


def _as_backends(backends: Iterable[Backend | tuple[str, Any]]) -> list[Backend]:
    out = []
    for b in backends:
        if isinstance(b, Backend):
            out.append(b)
        else:
            bid, executor = b
            out.append(Backend(str(bid), executor))
    return out


def _root_verdict(rec: TaskRecord) -> str:
    if not rec.attempts:
        return "error"
    last = rec.attempts[-1]
    return "success" if last.verdict == "accepted" and (last.judge or {}).get("verdict") == "success" else "error"


def spawn_branches(
    task: Task | str,
    backends: list[Backend | tuple[str, Any]],
    graph: AgentGraph,
    cfg: RunConfig | None = None,
    ws: Workspace | None = None,
    *,
    ledger: QualityLedger | None = None,
    warnings: list[str] | None = None,
) -> list[Branch]:
    """Run ``task`` once per backend, each on its own workspace sub-root.

    Backends sharing an id are collapsed to the first occurrence with a
    warning. Each branch gets one :class:`Delta` carrying the judge verdict
    on its root result; when a ``ledger`` is given, the branch's quality is
    updated from that result.
    """
    cfg = cfg or RunConfig()
    backends = _as_backends(backends)
    if not backends:
        raise NoBackends("spawn_branches needs at least one executor backend")
    warnings = warnings if warnings is not None else []
    unique: list[Backend] = []
    seen: set[str] = set()
    for b in backends:
        if b.id in seen:
            msg = f"duplicate backend id {b.id!r} ignored"
            warnings.append(msg)
            logger.warning(msg)
            continue
        seen.add(b.id)
        unique.append(b)

    ws = ws or Workspace(descriptor_limit=cfg.descriptor_limit)
    description = task.description if isinstance(task, Task) else task
    task_id = task.id if isinstance(task, Task) else "T0"

    def run(b: Backend) -> Branch:
        sub = ws.subspace(b.id)
        result = execute(Task(task_id, description), graph.copy(), b.executor, cfg, sub)
        rec = result.root
        out = rec.output
        delta = Delta(
            branch_id=b.id,
            task_id=task_id,
            refs=out.refs() if out is not None else [],
            verdict=_root_verdict(rec),
            task=description,
            output=out.to_dict() if out is not None else None,
            source=sub,
        )
        return Branch(b.id, b.id, b.executor, sub, [delta], records=[rec])

    workers = max(1, min(len(unique), cfg.max_parallel))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        branches = list(pool.map(run, unique))
    if ledger is not None:
        for br in branches:
            last = br.records[-1].attempts[-1] if br.records[-1].attempts else None
            ledger.update(br.id, attempt_quality(last) if last is not None else 0.0)
            br.quality = ledger.score(br.id)
    return branches


def _verdict_of(delta: Delta, verdicts) -> str | None:
    if verdicts is None:
        return delta.verdict
    v = verdicts.get(delta.id) if isinstance(verdicts, dict) else None
    if v is None:
        return delta.verdict
    if isinstance(v, bool):
        return "success" if v else "error"
    return str(v)


def merge(main: MainBranch, deltas: Iterable[Delta], verdicts: dict[str, Any] | None = None) -> MainBranch:
    """Fold judge-accepted deltas into ``main``, preserving order.

    A delta already in ``main`` is skipped, so re-merging is idempotent.
    Rejected deltas are recorded but never merged. Each newly accepted delta
    has its referenced artifacts archived under ``<branch>/<addr>`` and adds
    one training example pointing at those archived copies.
    """
    merged = set(main.delta_ids())
    rejected = {d.id for d in main.rejected}
    for delta in deltas:
        verdict = _verdict_of(delta, verdicts)
        if verdict is None:
            raise ValueError(f"delta {delta.id} has no judge verdict")
        if verdict != "success":
            if delta.id not in rejected:
                rejected.add(delta.id)
                main.rejected.append(delta)
            continue
        if delta.id in merged:
            continue
        archived = []
        for addr, desc in delta.refs:
            addr = normalize_address(addr)
            target = f"{delta.branch_id}/{addr}"
            if delta.source is not None and delta.source.exists(addr):
                d = delta.source.descriptor(addr)
                main.archive.put(target, delta.source.get(addr), d)
            elif not main.archive.exists(target):
                raise ValueError(f"accepted delta {delta.id} references {addr}, which its branch never stored")
            archived.append((target, desc))
        accepted = copy.copy(delta)
        accepted.verdict = "success"
        main.deltas.append(accepted)
        merged.add(delta.id)
        main.dataset.examples.append(
            TrainingExample(delta.id, delta.task, dict(delta.output or {}), tuple(archived))
        )
    return main


def accumulate_training_data(
    main: MainBranch,
    path: str | Path | None = None,
    *,
    hook: Callable[[Branch | None, Path], None] | None = None,
    branch: Branch | None = None,
) -> TrainingDataset:
    """Extract the dataset from ``main``; optionally export it and call the train hook."""
    dataset = TrainingDataset(list(main.dataset.examples))
    if path is not None:
        out = dataset.export(path)
        if hook is not None:
            hook(branch, out)
    return dataset


def prune_branches(
    branches: list[Branch], ledger: QualityLedger, cfg: RunConfig | None = None
) -> tuple[list[Branch], list[Branch]]:
    """Split ``branches`` into (kept, pruned) by audit quality.

    A branch is pruned once it has at least ``cfg.min_observations`` audited
    tasks and its quality is below ``cfg.prune_threshold``. The best branch
    (highest quality, then smallest id) always survives.
    """
    cfg = cfg or RunConfig()
    if not branches:
        raise ValueError("prune_branches needs at least one branch")
    best = min(branches, key=lambda b: (-ledger.score(b.id), b.id))
    kept, pruned = [], []
    for b in branches:
        b.quality = ledger.score(b.id)
        weak = ledger.observations(b.id) >= cfg.min_observations and b.quality < cfg.prune_threshold
        (pruned if weak and b is not best else kept).append(b)
    return kept, pruned


# -- topology ---------------------------------------------------------------


@dataclass
class RestructureReport:
    graph: AgentGraph
    fused: list[tuple[str, str]] = field(default_factory=list)  # (survivor, absorbed)
    split: list[tuple[str, str, list[str]]] = field(default_factory=list)  # (planner, new, moved)
    rolled_back: list[str] = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return bool(self.fused or self.split)

    def lineage(self) -> dict[str, Any]:
        return {
            "fused": {absorbed: survivor for survivor, absorbed in self.fused},
            "split": {p: {"new": new, "moved": list(moved)} for p, new, moved in self.split},
            "rolled_back": list(self.rolled_back),
        }


def pressure_from_records(records: Iterable[TaskRecord]) -> Counter:
    """Runs (root records) in which each planner had a decomposition truncated."""
    pressure: Counter = Counter()
    for root in records:
        hit = {rec.agent_id for rec in root.walk() if any("truncated" in w for w in rec.warnings)}
        pressure.update(hit)
    return pressure


def _fuse(graph: AgentGraph, survivor: str, absorbed: str) -> None:
    s, a = graph[survivor], graph[absorbed]
    s.capability = CapabilityDescriptor(
        s.capability.summary if s.capability.summary else a.capability.summary,
        s.capability.tags | a.capability.tags,
        s.capability.io_contract,
    )
    for parent in graph.parents(absorbed):
        p = graph.nodes[parent]
        i = p.children.index(absorbed)
        if survivor in p.children:
            p.children.pop(i)
        else:
            p.children[i] = survivor
    if absorbed in graph.roots:
        graph.roots.discard(absorbed)
        if not graph.parents(survivor):
            graph.roots.add(survivor)
    del graph.nodes[absorbed]
    graph.version += 1
    graph.refresh_levels()


def _split_id(graph: AgentGraph, planner: str) -> str:
    base = f"{planner}.sub"
    candidate, i = base, 1
    while candidate in graph.nodes:
        i += 1
        candidate = f"{base}{i}"
    return candidate


def _split(graph: AgentGraph, planner: str) -> tuple[str, list[str]]:
    p = graph[planner]
    n = len(p.children)
    moved = p.children[n - (n + 1) // 2 :]
    new_id = _split_id(graph, planner)
    tags = frozenset().union(*(graph.nodes[c].capability.tags for c in moved))
    node = AgentNode(
        new_id,
        Role.PLANNER,
        CapabilityDescriptor(f"coordinates work split off from {planner}", tags),
    )
    graph.nodes[new_id] = node
    p.children = [c for c in p.children if c not in moved] + [new_id]
    node.children = list(moved)
    graph.version += 1
    graph.refresh_levels()
    return new_id, moved


def _fuse_candidates(graph: AgentGraph, threshold: float) -> list[tuple[str, str]]:
    pairs = []
    taken: set[str] = set()
    for parent in sorted(graph.nodes):
        kids = sorted(
            c for c in graph.nodes[parent].children if graph.nodes[c].role is Role.FUNCTIONAL and c not in taken
        )
        for i, a in enumerate(kids):
            if a in taken:
                continue
            for b in kids[i + 1 :]:
                if b in taken:
                    continue
                if set_cosine(graph.nodes[a].capability.tags, graph.nodes[b].capability.tags) >= threshold:
                    pairs.append((a, b))
                    taken.add(b)
    return pairs


def restructure(
    graph: AgentGraph,
    ledger: QualityLedger | None = None,
    cfg: RunConfig | None = None,
    pressure: dict[str, int] | None = None,
) -> RestructureReport:
    """Apply fusion then splitting to a copy of ``graph``.

    Each transformation is validated on its own; one that would break an
    invariant is rolled back and listed in ``rolled_back``. ``ledger`` is
    consulted only to order split candidates (weakest planner first).
    """
    cfg = cfg or RunConfig()
    g = graph.copy()
    report = RestructureReport(g)

    for survivor, absorbed in _fuse_candidates(g, cfg.fuse_threshold):
        if survivor not in g.nodes or absorbed not in g.nodes:
            continue
        trial = g.copy()
        _fuse(trial, survivor, absorbed)
        if validate_graph(trial).ok:
            _fuse(g, survivor, absorbed)
            report.fused.append((survivor, absorbed))
        else:
            report.rolled_back.append(f"fuse {absorbed} into {survivor}")

    pressure = pressure or {}
    planners = [
        a for a, count in pressure.items()
        if count >= cfg.split_observations and a in g.nodes and g.nodes[a].role is Role.PLANNER and g.nodes[a].children
    ]
    score = ledger.score if ledger is not None else (lambda _a: 0.0)
    for planner in sorted(planners, key=lambda a: (score(a), a)):
        trial = g.copy()
        _split(trial, planner)
        if validate_graph(trial).ok:
            new_id, moved = _split(g, planner)
            report.split.append((planner, new_id, moved))
        else:
            report.rolled_back.append(f"split {planner}")
    report.graph = g
    return report


def restructure_topology(
    graph: AgentGraph,
    ledger: QualityLedger | None = None,
    cfg: RunConfig | None = None,
    pressure: dict[str, int] | None = None,
    *,
    lineage: dict[str, Any] | None = None,
    strict: bool = False,
) -> AgentGraph:
    """Fuse similar functional siblings and split pressured planners.

    Returns a new graph; the input is not modified. With ``strict`` any
    rolled-back transformation raises :class:`WouldViolateInvariant` instead.
    ``lineage``, when given, is filled with the fusion/split map.
    """
    report = restructure(graph, ledger, cfg, pressure)
    if lineage is not None:
        lineage.update(report.lineage())
    if strict and report.rolled_back:
        raise WouldViolateInvariant("; ".join(report.rolled_back))
    return report.graph
