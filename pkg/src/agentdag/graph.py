"""Pyramid-shaped agent DAG: nodes, parent->child edges, fan-out bounds, levels.

Edges live in ``AgentNode.children`` only; parent lists are derived. Levels are
the shortest distance from any root and are maintained incrementally by
:meth:`AgentGraph.connect`. :func:`validate_graph` never trusts that bookkeeping
and re-derives everything from the children lists, so it also catches graphs
that were edited by hand or loaded from disk.
"""

from __future__ import annotations

import copy
import re
from collections import deque
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from .errors import CycleDetected, DuplicateId, FanOutExceeded, InvalidRole, UnknownId
from .text import normalize_tags, tokenize

AgentId = str

AGENT_ID_LIMIT = 64
_AGENT_ID_RE = re.compile(r"^[A-Za-z0-9_.:-]{1,%d}$" % AGENT_ID_LIMIT)

DEFAULT_K_MAX = 5
DEFAULT_MAX_DEPTH = 8


class Role(str, Enum):
    PLANNER = "planner"
    FUNCTIONAL = "functional"
    JUDGE = "judge"
    ROUTER = "router"


# Roles that sit outside the pyramid: exempt from reachability and level checks.
OFF_PYRAMID = frozenset({Role.JUDGE, Role.ROUTER})

DEFAULT_TOOLS: dict[Role, frozenset[str]] = {
    Role.PLANNER: frozenset({"file_read", "dir_list", "final_output"}),
    Role.FUNCTIONAL: frozenset({"file_read", "file_write", "dir_list", "final_output"}),
    Role.JUDGE: frozenset({"file_read", "dir_list", "execute_code", "final_output"}),
    Role.ROUTER: frozenset(),
}


def check_agent_id(value: str) -> str:
    if not isinstance(value, str) or not _AGENT_ID_RE.match(value):
        raise ValueError(
            f"invalid agent id {value!r}: need 1-{AGENT_ID_LIMIT} chars of [A-Za-z0-9_.:-]"
        )
    return value


@dataclass(frozen=True)
class CapabilityDescriptor:
    summary: str = ""
    tags: frozenset[str] = frozenset()
    io_contract: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "tags", normalize_tags(self.tags))

    def tokens(self) -> frozenset[str]:
        """Tag tokens plus summary tokens; the set the router matches against."""
        return self.tags | tokenize(self.summary)


@dataclass
class AgentNode:
    id: AgentId
    role: Role
    capability: CapabilityDescriptor = field(default_factory=CapabilityDescriptor)
    children: list[AgentId] = field(default_factory=list)
    tool_names: frozenset[str] | None = None
    level: int = 0
    prompt: str = ""

    def __post_init__(self) -> None:
        check_agent_id(self.id)
        self.role = Role(self.role)
        if self.tool_names is None:
            self.tool_names = DEFAULT_TOOLS[self.role]
        else:
            self.tool_names = frozenset(self.tool_names)
        if self.level < 0:
            raise ValueError("level must be non-negative")

    @property
    def system_prompt(self) -> str:
        if self.prompt:
            return self.prompt
        cap = self.capability
        text = f"You are agent {self.id!r} ({self.role.value})."
        if cap.summary:
            text += f" Responsibility: {cap.summary}"
        if cap.io_contract:
            text += f" I/O: {cap.io_contract}"
        return text


@dataclass(frozen=True)
class Finding:
    kind: str
    agents: tuple[AgentId, ...]
    detail: str = ""


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def of_kind(self, kind: str) -> list[Finding]:
        return [f for f in self.findings if f.kind == kind]

    def kinds(self) -> set[str]:
        return {f.kind for f in self.findings}

    def __iter__(self) -> Iterator[Finding]:
        return iter(self.findings)

    def __len__(self) -> int:
        return len(self.findings)


class AgentGraph:
    """Mutable agent DAG. Treat as read-only while a run is executing."""

    def __init__(self, k_max: int = DEFAULT_K_MAX, max_depth: int = DEFAULT_MAX_DEPTH) -> None:
        if k_max < 1:
            raise ValueError("k_max must be positive")
        if max_depth < 1:
            raise ValueError("max_depth must be positive")
        self.k_max = k_max
        self.max_depth = max_depth
        self.nodes: dict[AgentId, AgentNode] = {}
        self.roots: set[AgentId] = set()
        # Levels of nodes currently reachable from a root.
        self._levels: dict[AgentId, int] = {}
        self.version = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, agent_id: object) -> bool:
        return agent_id in self.nodes

    def __getitem__(self, agent_id: AgentId) -> AgentNode:
        try:
            return self.nodes[agent_id]
        except KeyError:
            raise UnknownId(f"unknown agent {agent_id!r}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AgentGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"<AgentGraph N={len(self.nodes)} roots={sorted(self.roots)} k_max={self.k_max}>"

    # -- construction -----------------------------------------------------

    def add_agent(self, node: AgentNode, *, root: bool | None = None) -> AgentGraph:
        """Insert ``node``; the first node of an empty graph becomes a root.

        Children already listed on ``node`` are connected one by one, so they
        must exist and obey the fan-out bound.
        """
        if node.id in self.nodes:
            raise DuplicateId(f"agent {node.id!r} already present")
        if node.role is Role.FUNCTIONAL and node.children:
            raise InvalidRole(f"functional agent {node.id!r} cannot have children")
        pending = list(node.children)
        for child in pending:
            if child not in self.nodes:
                raise UnknownId(f"unknown child {child!r} of {node.id!r}")
        if len(pending) > self.k_max:
            raise FanOutExceeded(f"{node.id!r} declares {len(pending)} children > k_max={self.k_max}")
        node.children = []
        self.nodes[node.id] = node
        if root is None:
            root = not self.roots
        if root:
            self.roots.add(node.id)
            node.level = 0
            self._levels[node.id] = 0
        self.version += 1
        for child in pending:
            self.connect(node.id, child)
        return self

    def connect(self, parent: AgentId, child: AgentId) -> AgentGraph:
        p = self[parent]
        self[child]
        if p.role is Role.FUNCTIONAL:
            raise InvalidRole(f"functional agent {parent!r} cannot have children")
        if child in p.children:
            return self
        if len(p.children) >= self.k_max:
            raise FanOutExceeded(f"{parent!r} already has k_max={self.k_max} children")
        if child == parent or self._reaches(child, parent):
            raise CycleDetected(f"edge {parent!r}->{child!r} would close a cycle")
        p.children.append(child)
        self.version += 1
        if parent in self._levels:
            self._relax_from(child, self._levels[parent] + 1)
        return self

    def disconnect(self, parent: AgentId, child: AgentId) -> AgentGraph:
        p = self[parent]
        if child in p.children:
            p.children.remove(child)
            self.version += 1
            self.refresh_levels()
        return self

    def remove_agent(self, agent_id: AgentId) -> AgentGraph:
        node = self[agent_id]
        if node.children:
            raise InvalidRole(f"cannot remove {agent_id!r} while it has children")
        for other in self.nodes.values():
            if agent_id in other.children:
                other.children.remove(agent_id)
        del self.nodes[agent_id]
        self.roots.discard(agent_id)
        self.version += 1
        self.refresh_levels()
        return self

    def _reaches(self, src: AgentId, dst: AgentId) -> bool:
        seen = {src}
        stack = [src]
        while stack:
            cur = stack.pop()
            if cur == dst:
                return True
            for nxt in self.nodes[cur].children:
                if nxt not in seen and nxt in self.nodes:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def _relax_from(self, start: AgentId, level: int) -> None:
        old = self._levels.get(start)
        if old is not None and old <= level:
            return
        self._levels[start] = level
        self.nodes[start].level = level
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            nxt_level = self._levels[cur] + 1
            for child in self.nodes[cur].children:
                old = self._levels.get(child)
                if old is None or nxt_level < old:
                    self._levels[child] = nxt_level
                    self.nodes[child].level = nxt_level
                    queue.append(child)

    def refresh_levels(self) -> None:
        self._levels = compute_levels(self)
        for agent_id, level in self._levels.items():
            self.nodes[agent_id].level = level

    # -- queries ----------------------------------------------------------

    def level_of(self, agent_id: AgentId) -> int | None:
        """Maintained level, or ``None`` when the node is unreachable."""
        return self._levels.get(agent_id)

    def parents(self, agent_id: AgentId) -> list[AgentId]:
        return sorted(a for a, n in self.nodes.items() if agent_id in n.children)

    def edges(self) -> list[tuple[AgentId, AgentId]]:
        return [(a, c) for a in sorted(self.nodes) for c in self.nodes[a].children]

    def by_role(self, role: Role) -> list[AgentNode]:
        return [self.nodes[a] for a in sorted(self.nodes) if self.nodes[a].role is role]

    def copy(self) -> AgentGraph:
        return copy.deepcopy(self)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        nodes = []
        for agent_id in sorted(self.nodes):
            n = self.nodes[agent_id]
            entry: dict[str, Any] = {
                "id": n.id,
                "role": n.role.value,
                "level": n.level,
                "summary": n.capability.summary,
                "tags": sorted(n.capability.tags),
                "children": list(n.children),
                "tools": sorted(n.tool_names or ()),
            }
            if n.capability.io_contract:
                entry["io_contract"] = n.capability.io_contract
            if n.prompt:
                entry["prompt"] = n.prompt
            nodes.append(entry)
        return {
            "k_max": self.k_max,
            "max_depth": self.max_depth,
            "roots": sorted(self.roots),
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any], *, strict: bool = True) -> AgentGraph:
        """Rebuild a graph; with ``strict=False`` edges are taken as written so
        that :func:`validate_graph` can report whatever is wrong with them."""
        graph = cls(
            k_max=int(data.get("k_max", DEFAULT_K_MAX)),
            max_depth=int(data.get("max_depth", DEFAULT_MAX_DEPTH)),
        )
        raw_nodes = data.get("nodes") or []
        roots = set(data.get("roots") or [])
        # Insert every node first, then wire edges in file order.
        for raw in raw_nodes:
            node = AgentNode(
                id=str(raw["id"]),
                role=Role(raw.get("role", "functional")),
                capability=CapabilityDescriptor(
                    summary=raw.get("summary", ""),
                    tags=frozenset(raw.get("tags") or ()),
                    io_contract=raw.get("io_contract", ""),
                ),
                tool_names=frozenset(raw["tools"]) if "tools" in raw else None,
                level=int(raw.get("level", 0)),
                prompt=raw.get("prompt", ""),
            )
            graph.add_agent(node, root=node.id in roots)
        for raw in raw_nodes:
            for child in raw.get("children") or ():
                if strict:
                    graph.connect(str(raw["id"]), str(child))
                else:
                    graph.nodes[str(raw["id"])].children.append(str(child))
        if not strict:
            graph.version += 1
            graph.refresh_levels()
        return graph


def add_agent(graph: AgentGraph, node: AgentNode, *, root: bool | None = None) -> AgentGraph:
    return graph.add_agent(node, root=root)


def connect(graph: AgentGraph, parent: AgentId, child: AgentId) -> AgentGraph:
    return graph.connect(parent, child)


def functional_capacity(branching: float, depth: int) -> float:
    """Approximate number of functional agents reachable at ``depth``: b**L."""
    if branching < 1:
        raise ValueError("branching factor must be >= 1")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return branching**depth


def compute_levels(graph: AgentGraph) -> dict[AgentId, int]:
    """Shortest root distance for every reachable node, from scratch."""
    levels: dict[AgentId, int] = {}
    queue: deque[AgentId] = deque()
    for root in sorted(graph.roots):
        if root in graph.nodes:
            levels[root] = 0
            queue.append(root)
    while queue:
        cur = queue.popleft()
        for child in graph.nodes[cur].children:
            if child in graph.nodes and child not in levels:
                levels[child] = levels[cur] + 1
                queue.append(child)
    return levels


def _cycles(graph: AgentGraph) -> list[list[AgentId]]:
    """Strongly connected components that contain a cycle (Tarjan, iterative)."""
    index: dict[AgentId, int] = {}
    low: dict[AgentId, int] = {}
    on_stack: set[AgentId] = set()
    stack: list[AgentId] = []
    found: list[list[AgentId]] = []
    counter = 0

    def succ(v: AgentId) -> list[AgentId]:
        return [c for c in graph.nodes[v].children if c in graph.nodes]

    for start in sorted(graph.nodes):
        if start in index:
            continue
        work: list[tuple[AgentId, Iterator[AgentId]]] = []
        index[start] = low[start] = counter
        counter += 1
        stack.append(start)
        on_stack.add(start)
        work.append((start, iter(succ(start))))
        while work:
            v, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(succ(w))))
                    advanced = True
                    break
                if w in on_stack:
                    low[v] = min(low[v], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == v:
                        break
                if len(comp) > 1 or v in graph.nodes[v].children:
                    found.append(sorted(comp))
    return sorted(found)


def validate_graph(graph: AgentGraph) -> ValidationReport:
    """List every violated graph invariant. Never raises."""
    findings: list[Finding] = []
    nodes = graph.nodes

    if nodes and not graph.roots:
        findings.append(Finding("NoRoots", (), "graph has nodes but no root"))
    for root in sorted(graph.roots):
        if root not in nodes:
            findings.append(Finding("UnknownId", (root,), "root is not a node"))

    for agent_id in sorted(nodes):
        node = nodes[agent_id]
        for child in node.children:
            if child not in nodes:
                findings.append(Finding("UnknownId", (agent_id, child), "edge to missing node"))
        if len(set(node.children)) != len(node.children):
            findings.append(Finding("DuplicateEdge", (agent_id,), "repeated child"))
        if len(node.children) > graph.k_max:
            findings.append(
                Finding("FanOutExceeded", (agent_id,), f"{len(node.children)} children > k_max={graph.k_max}")
            )
        if node.role is Role.FUNCTIONAL and node.children:
            findings.append(Finding("FunctionalWithChildren", (agent_id,), "functional agents are sinks"))
        if node.role is Role.PLANNER and not node.children:
            findings.append(Finding("PlannerWithoutChildren", (agent_id,), "planner has nothing to delegate to"))
        if node.role in OFF_PYRAMID and node.children:
            findings.append(Finding("InvalidRole", (agent_id,), f"{node.role.value} agents take no children"))
        if node.role is Role.FUNCTIONAL and not node.capability.tags:
            findings.append(Finding("MissingTags", (agent_id,), "functional agent advertises no tags"))

    for comp in _cycles(graph):
        findings.append(Finding("Cycle", tuple(comp), " -> ".join(comp)))

    levels = compute_levels(graph)
    for agent_id in sorted(nodes):
        node = nodes[agent_id]
        if agent_id not in levels:
            if node.role not in OFF_PYRAMID:
                findings.append(Finding("Unreachable", (agent_id,), "not reachable from any root"))
            continue
        if levels[agent_id] > graph.max_depth:
            findings.append(
                Finding("DepthExceeded", (agent_id,), f"depth {levels[agent_id]} > max_depth={graph.max_depth}")
            )
    return ValidationReport(findings)


def save_graph(graph: AgentGraph, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(graph.to_dict(), sort_keys=False), encoding="utf-8")


def load_graph(path: str | Path, *, strict: bool = True) -> AgentGraph:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return AgentGraph.from_dict(data, strict=strict)


def pyramid(
    branching: int,
    depth: int,
    *,
    k_max: int = DEFAULT_K_MAX,
    tag_fn=None,
) -> AgentGraph:
    """Complete ``branching``-ary pyramid with functional agents at ``depth``.

    Ids are ``n`` for the root and ``n.i.j...`` below it. ``tag_fn(agent_id)``
    supplies capability tags (default: the id's path segments).
    """
    graph = AgentGraph(k_max=k_max, max_depth=max(depth, 1))

    def tags_for(agent_id: str) -> Iterable[str]:
        if tag_fn is not None:
            return tag_fn(agent_id)
        return ["agent" + agent_id.replace(".", "x")]

    def role_for(d: int) -> Role:
        return Role.FUNCTIONAL if d == depth else Role.PLANNER

    graph.add_agent(AgentNode("n", role_for(0), CapabilityDescriptor(tags=frozenset(tags_for("n")))), root=True)
    frontier = ["n"]
    for d in range(1, depth + 1):
        nxt = []
        for parent in frontier:
            for i in range(branching):
                cid = f"{parent}.{i}"
                graph.add_agent(AgentNode(cid, role_for(d), CapabilityDescriptor(tags=frozenset(tags_for(cid)))), root=False)
                graph.connect(parent, cid)
                nxt.append(cid)
        frontier = nxt
    return graph
