from __future__ import annotations

import os
import random
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from agentdag import AgentGraph, AgentNode, CapabilityDescriptor, RunConfig, Role, Workspace  # noqa: E402
from agentdag.harness import Scenario  # noqa: E402

settings.register_profile("default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def node(agent_id: str, role: str, tags=(), summary: str = "", children=()) -> AgentNode:
    return AgentNode(agent_id, Role(role), CapabilityDescriptor(summary, frozenset(tags)), list(children))


VOCAB = [f"w{i}" for i in range(14)]


def random_graph(rng: random.Random, n: int) -> AgentGraph:
    """Random valid DAG: every node reachable, fan-out <= 5, some multi-parent edges."""
    g = AgentGraph(k_max=5, max_depth=50)
    roots = rng.randint(1, 3)
    ids = [f"a{i:02d}" for i in range(n)]
    rng.shuffle(ids)
    roles = {}
    for i, agent_id in enumerate(ids):
        is_root = i < roots
        role = "planner" if is_root or rng.random() < 0.45 else "functional"
        roles[agent_id] = role
        tags = rng.sample(VOCAB, rng.randint(0, 4))
        if role == "functional" and not tags:
            tags = [rng.choice(VOCAB)]
        g.add_agent(node(agent_id, role, tags), root=is_root)
        if not is_root:
            parents = [p for p in ids[:i] if roles[p] == "planner" and len(g[p].children) < 5]
            if not parents:
                # promote an earlier node so the new one can hang somewhere
                g.nodes[ids[0]].role = Role.PLANNER
                parents = [ids[0]] if len(g[ids[0]].children) < 5 else []
            if parents:
                g.connect(rng.choice(parents), agent_id)
            else:
                g.roots.add(agent_id)
                g.refresh_levels()
    # extra edges create multi-parent nodes and path ties
    for _ in range(n // 3):
        a, b = rng.sample(ids, 2)
        if g[a].role is Role.PLANNER and len(g[a].children) < 5:
            try:
                g.connect(a, b)
            except Exception:
                pass
    if rng.random() < 0.3:
        g.add_agent(node("judge", "judge", rng.sample(VOCAB, 2)), root=False)
    return g


def report_graph() -> AgentGraph:
    """lead -> {collector, writer}: the small pyramid most orchestrator tests use."""
    g = AgentGraph()
    g.add_agent(node("lead", "planner", ["quarterly", "report"], "project lead"))
    g.add_agent(node("collector", "functional", ["collect", "sales", "figures"]), root=False)
    g.add_agent(node("writer", "functional", ["draft", "summary", "write"]), root=False)
    g.connect("lead", "collector").connect("lead", "writer")
    return g


REPORT_SCENARIO = {
    "name": "report",
    "tasks": ["quarterly report"],
    "defaults": {"judge": "success", "merge": "concat"},
    "entries": [
        {
            "match": "quarterly report",
            "decompose": [{"task": "collect sales figures", "writes": ["data/sales.csv"]}, "draft the summary"],
        },
        {
            "match": "collect sales",
            "atom": {"artifacts": [{"addr": "data/sales.csv", "content": "q,amount\n1,10\n", "desc": "sales table"}]},
        },
        {
            "match": "draft the summary",
            "atom": {"output": "drafted", "artifacts": [{"addr": "out/summary.md", "content": "# Summary\n"}]},
        },
    ],
}


def report_scenario(**entry_overrides) -> Scenario:
    """The report scenario; keyword overrides patch entries by their match pattern."""
    data = {**REPORT_SCENARIO, "entries": [dict(e) for e in REPORT_SCENARIO["entries"]]}
    for entry in data["entries"]:
        entry.update(entry_overrides.get(entry["match"], {}))
    return Scenario.from_dict(data)


@pytest.fixture
def ws(tmp_path) -> Workspace:
    return Workspace(tmp_path / "run")


@pytest.fixture
def cfg() -> RunConfig:
    return RunConfig()


def pytest_terminal_summary(terminalreporter):
    """List the acceptance criteria outcomes after the run, one line each."""
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, text = results[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {text}")
