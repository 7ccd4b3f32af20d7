from __future__ import annotations

import pytest
from conftest import node
from hypothesis import given
from hypothesis import strategies as st
from oracles import complete_tree_leaves

from agentdag.errors import CycleDetected, DuplicateId, FanOutExceeded, InvalidRole, UnknownId
from agentdag.graph import (
    AgentGraph,
    compute_levels,
    functional_capacity,
    load_graph,
    pyramid,
    save_graph,
    validate_graph,
)


def test_first_agent_becomes_root():
    g = AgentGraph()
    g.add_agent(node("top", "planner", ["plan"]))
    assert g.roots == {"top"}
    assert len(g) == 1
    assert g.level_of("top") == 0


def test_functional_with_children_rejected():
    g = AgentGraph()
    g.add_agent(node("leaf", "functional", ["x"]))
    with pytest.raises(InvalidRole):
        g.add_agent(node("bad", "functional", ["y"], children=["leaf"]))


def test_duplicate_id_rejected():
    g = AgentGraph()
    g.add_agent(node("a", "planner", ["x"]))
    with pytest.raises(DuplicateId):
        g.add_agent(node("a", "planner", ["y"]))


def test_fifth_child_ok_sixth_exceeds():
    g = AgentGraph(k_max=5)
    g.add_agent(node("p", "planner", ["p"]))
    for i in range(6):
        g.add_agent(node(f"c{i}", "functional", [f"t{i}"]), root=False)
    for i in range(5):
        g.connect("p", f"c{i}")
    assert len(g["p"].children) == 5
    with pytest.raises(FanOutExceeded):
        g.connect("p", "c5")


def test_self_loop_and_two_cycle():
    g = AgentGraph()
    g.add_agent(node("a", "planner", ["a"]))
    g.add_agent(node("b", "planner", ["b"]), root=False)
    with pytest.raises(CycleDetected):
        g.connect("a", "a")
    g.connect("a", "b")
    with pytest.raises(CycleDetected):
        g.connect("b", "a")


def test_connect_unknown_and_from_functional():
    g = AgentGraph()
    g.add_agent(node("a", "planner", ["a"]))
    g.add_agent(node("f", "functional", ["f"]), root=False)
    with pytest.raises(UnknownId):
        g.connect("a", "ghost")
    with pytest.raises(InvalidRole):
        g.connect("f", "a")


def test_connect_is_idempotent_for_existing_edge():
    g = AgentGraph(k_max=1)
    g.add_agent(node("a", "planner", ["a"]))
    g.add_agent(node("f", "functional", ["f"]), root=False)
    g.connect("a", "f")
    g.connect("a", "f")
    assert g["a"].children == ["f"]


@pytest.mark.parametrize("b,L,expected", [(1, 10, 1), (2, 3, 8), (5, 4, 625)])
def test_capacity_examples(b, L, expected):
    assert functional_capacity(b, L) == expected


def test_capacity_matches_enumerated_tree():
    for b in range(1, 4):
        for L in range(0, 5):
            assert functional_capacity(b, L) == complete_tree_leaves(b, L)


def test_valid_pyramid_has_empty_report():
    report = validate_graph(pyramid(3, 3))
    assert report.ok and len(report) == 0


def test_six_children_gives_exactly_one_fanout_finding():
    g = AgentGraph(k_max=5)
    g.add_agent(node("p", "planner", ["p"]))
    for i in range(6):
        g.add_agent(node(f"c{i}", "functional", [f"t{i}"]), root=False)
    g["p"].children = [f"c{i}" for i in range(6)]  # bypass connect on purpose
    report = validate_graph(g)
    assert [f.kind for f in report.findings] == ["FanOutExceeded"]


def test_orphan_reported_unreachable():
    g = pyramid(2, 2)
    g.add_agent(node("orphan", "functional", ["lost"]), root=False)
    report = validate_graph(g)
    assert report.kinds() == {"Unreachable"}
    assert report.of_kind("Unreachable")[0].agents == ("orphan",)


def test_planted_cycle_depth_and_role_findings():
    g = AgentGraph(k_max=5, max_depth=2)
    g.add_agent(node("r", "planner", ["r"]))
    g.add_agent(node("a", "planner", ["a"]), root=False)
    g.add_agent(node("b", "planner", ["b"]), root=False)
    g.add_agent(node("c", "functional", ["c"]), root=False)
    g.connect("r", "a").connect("a", "b").connect("b", "c")
    kinds = validate_graph(g).kinds()
    assert "DepthExceeded" in kinds
    g["b"].children.append("a")
    assert "Cycle" in validate_graph(g).kinds()
    g2 = pyramid(1, 1)
    g2["n.0"].children.append("n")
    assert "FunctionalWithChildren" in validate_graph(g2).kinds()


def test_judge_off_pyramid_is_not_unreachable():
    g = pyramid(2, 1)
    g.add_agent(node("judge", "judge", ["verify"]), root=False)
    assert validate_graph(g).ok


def test_multi_parent_level_is_shortest_distance():
    g = AgentGraph()
    g.add_agent(node("r", "planner", ["r"]))
    g.add_agent(node("m", "planner", ["m"]), root=False)
    g.add_agent(node("shared", "functional", ["s"]), root=False)
    g.connect("r", "m").connect("m", "shared")
    assert g.level_of("shared") == 2
    g.connect("r", "shared")
    assert g.level_of("shared") == 1
    g.disconnect("r", "shared")
    assert g.level_of("shared") == 2


def test_save_load_round_trip(tmp_path):
    g = pyramid(3, 2)
    g.add_agent(node("judge", "judge", ["verify"]), root=False)
    save_graph(g, tmp_path / "g.yaml")
    assert load_graph(tmp_path / "g.yaml") == g


OPS = st.lists(
    st.tuples(st.sampled_from(["add", "connect"]), st.integers(0, 11), st.integers(0, 11), st.booleans()),
    max_size=60,
)


@given(OPS, st.integers(1, 4))
def test_successful_sequences_never_break_invariants(ops, k_max):
    g = AgentGraph(k_max=k_max, max_depth=20)
    for op, a, b, planner in ops:
        try:
            if op == "add":
                g.add_agent(node(f"n{a}", "planner" if planner else "functional", [f"t{a}"]), root=not g.roots or b % 3 == 0)
            else:
                g.connect(f"n{a}", f"n{b}")
        except (DuplicateId, UnknownId, InvalidRole, FanOutExceeded, CycleDetected):
            pass
    kinds = validate_graph(g).kinds()
    assert "Cycle" not in kinds and "FanOutExceeded" not in kinds
    assert all(len(n.children) <= k_max for n in g.nodes.values())
    # incremental levels agree with a from-scratch derivation
    fresh = compute_levels(g)
    assert {a: g.level_of(a) for a in fresh} == fresh
