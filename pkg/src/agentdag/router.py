"""Direct task-to-agent routing over the whole graph.

:func:`route` consults an inverted tag index so only agents that share at least
one token with the task are scored. :func:`exhaustive_route` scores every node
and enumerates every simple root-to-target path; tests use it as the oracle.
"""

from __future__ import annotations

import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Protocol

from .errors import NoCandidate
from .graph import OFF_PYRAMID, AgentGraph, AgentId, AgentNode, compute_levels
from .text import cosine_key, set_cosine, tokenize


class Matcher(Protocol):
    """Pluggable scorer. Must return a value in [0, 1]."""

    def __call__(self, task_text: str, agent: AgentNode) -> float: ...


@dataclass(frozen=True)
class RouteResult:
    target: AgentId
    score: float
    path: list[AgentId]
    alternatives: list[tuple[AgentId, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "score": self.score,
            "path": list(self.path),
            "alternatives": [[a, s] for a, s in self.alternatives],
        }


def _task_text(task) -> str:
    text = task if isinstance(task, str) else task.description
    if not text or not text.strip():
        raise ValueError("task description must be non-empty")
    return text


def score(task, agent: AgentNode) -> float:
    """Cosine similarity of the task's token set and the agent's capability tokens."""
    return set_cosine(tokenize(_task_text(task)), agent.capability.tokens())


def _rank_key(key: Fraction, level: int, agent_id: AgentId) -> tuple:
    return (-key, level, agent_id)


def _routable(node: AgentNode) -> bool:
    return node.role not in OFF_PYRAMID


class _Index:
    def __init__(self, graph: AgentGraph) -> None:
        self.version = graph.version
        self.by_token: dict[str, list[AgentId]] = defaultdict(list)
        self.tokens: dict[AgentId, frozenset[str]] = {}
        for agent_id in sorted(graph.nodes):
            node = graph.nodes[agent_id]
            if not _routable(node):
                continue
            toks = node.capability.tokens()
            self.tokens[agent_id] = toks
            for tok in toks:
                self.by_token[tok].append(agent_id)
        self.levels = compute_levels(graph)
        self.parents: dict[AgentId, list[AgentId]] = defaultdict(list)
        for parent in sorted(graph.nodes):
            for child in graph.nodes[parent].children:
                self.parents[child].append(parent)


_INDEX_LOCK = threading.Lock()


def _index_for(graph: AgentGraph) -> _Index:
    with _INDEX_LOCK:
        idx = getattr(graph, "_route_index", None)
        if idx is None or idx.version != graph.version:
            idx = _Index(graph)
            graph._route_index = idx
        return idx


def _shortest_path(graph: AgentGraph, idx: _Index, target: AgentId) -> list[AgentId]:
    # Distance to target along reversed edges, then walk forward greedily
    # choosing the smallest id at each step: that yields the lexicographically
    # smallest sequence among all shortest paths.
    dist = {target: 0}
    queue = deque([target])
    while queue:
        cur = queue.popleft()
        for parent in idx.parents.get(cur, ()):
            if parent not in dist:
                dist[parent] = dist[cur] + 1
                queue.append(parent)
    roots = [r for r in graph.roots if r in dist]
    if not roots:
        return [target]
    best = min(dist[r] for r in roots)
    cur = min(r for r in roots if dist[r] == best)
    path = [cur]
    while cur != target:
        cur = min(c for c in graph.nodes[cur].children if dist.get(c) == dist[cur] - 1)
        path.append(cur)
    return path


def route(task, graph: AgentGraph, *, floor: float = 0.0, max_alternatives: int = 5) -> RouteResult:
    """Pick the best-matching agent anywhere in the graph.

    Ties resolve to the lower level, then the lexicographically smaller id.
    Raises :class:`NoCandidate` when no agent scores strictly above ``floor``.
    """
    text = _task_text(task)
    task_tokens = tokenize(text)
    idx = _index_for(graph)
    candidates: set[AgentId] = set()
    for tok in task_tokens:
        candidates.update(idx.by_token.get(tok, ()))
    ranked = []
    for agent_id in candidates:
        key = cosine_key(task_tokens, idx.tokens[agent_id])
        value = set_cosine(task_tokens, idx.tokens[agent_id])
        if value > floor:
            level = idx.levels.get(agent_id, graph.nodes[agent_id].level)
            ranked.append((_rank_key(key, level, agent_id), agent_id, value))
    if not ranked:
        raise NoCandidate(f"no agent matches task {text[:60]!r}")
    ranked.sort()
    _, target, best = ranked[0]
    alternatives = [(a, v) for _, a, v in ranked[1 : 1 + max_alternatives]]
    return RouteResult(target, best, _shortest_path(graph, idx, target), alternatives)


def _all_paths_to(graph: AgentGraph, target: AgentId) -> list[list[AgentId]]:
    paths: list[list[AgentId]] = []

    def walk(cur: AgentId, trail: list[AgentId]) -> None:
        if cur == target:
            paths.append(list(trail))
            return
        for child in graph.nodes[cur].children:
            if child in graph.nodes and child not in trail:
                trail.append(child)
                walk(child, trail)
                trail.pop()

    for root in sorted(graph.roots):
        if root in graph.nodes:
            walk(root, [root])
    return paths


def exhaustive_route(task, graph: AgentGraph, *, floor: float = 0.0, max_alternatives: int = 5) -> RouteResult:
    """Brute-force reference for :func:`route`: every node, every path."""
    text = _task_text(task)
    task_tokens = tokenize(text)
    levels = compute_levels(graph)
    ranked = []
    for agent_id, node in graph.nodes.items():
        if not _routable(node):
            continue
        toks = node.capability.tokens()
        value = set_cosine(task_tokens, toks)
        if value > floor:
            level = levels.get(agent_id, node.level)
            ranked.append((_rank_key(cosine_key(task_tokens, toks), level, agent_id), agent_id, value))
    if not ranked:
        raise NoCandidate(f"no agent matches task {text[:60]!r}")
    ranked.sort()
    _, target, best = ranked[0]
    paths = _all_paths_to(graph, target)
    path = min(paths, key=lambda p: (len(p), p)) if paths else [target]
    alternatives = [(a, v) for _, a, v in ranked[1 : 1 + max_alternatives]]
    return RouteResult(target, best, path, alternatives)


def route_among(task, graph: AgentGraph, candidates: list[AgentId]) -> AgentId | None:
    """Best of ``candidates`` by the same ranking as :func:`route`; ``None`` if all score zero."""
    task_tokens = tokenize(_task_text(task))
    levels = _index_for(graph).levels
    ranked = []
    for agent_id in candidates:
        node = graph[agent_id]
        if node.role in OFF_PYRAMID:
            continue
        toks = node.capability.tokens()
        if set_cosine(task_tokens, toks) > 0:
            ranked.append(_rank_key(cosine_key(task_tokens, toks), levels.get(agent_id, node.level), agent_id))
    if not ranked:
        return None
    return min(ranked)[2]
