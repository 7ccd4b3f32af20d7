from __future__ import annotations

import math
from pathlib import Path

import pytest
from conftest import node
from hypothesis import given
from hypothesis import strategies as st

from agentdag.config import RunConfig
from agentdag.context import (
    ExecutionContext,
    HistoryLog,
    IndexEntry,
    InteractionRecord,
    RecordKind,
    StackFrame,
    append_interaction,
    build_context,
    char_tokens,
    compress,
    measure,
)
from agentdag.errors import BudgetImpossible
from agentdag.harness import MockExecutor
from agentdag.workspace import Workspace

GOLDEN = Path(__file__).parent / "golden"


def unit(i: int) -> InteractionRecord:
    """A record measuring exactly one unit under the default proxy."""
    return InteractionRecord("tool_result", f"r{i:03d}")


def test_measure_sys_only():
    assert measure(ExecutionContext(sys="x" * 40)) == 10
    assert char_tokens("abcde") == 2


def test_measure_is_additive():
    ctx = ExecutionContext(
        sys="s" * 9,
        lm_index=[IndexEntry("a.txt", "alpha")],
        shared_stack=[StackFrame("root", "planner")],
        env_log=[InteractionRecord("tool_call", "c" * 13)],
    )
    assert measure(ctx) == ctx.sys_size() + ctx.lm_size() + ctx.stack_size() + ctx.env_size()
    assert measure(ctx) == 3 + math.ceil(len("a.txt: alpha") / 4) + math.ceil(len("root: planner") / 4) + 4


def test_build_context_empty_workspace(ws):
    ctx = build_context(node("a", "functional", ["x"]), ws, [StackFrame("a", "functional")])
    assert ctx.lm_index == [] and ctx.env_log == []
    assert ctx.tau == 2000 and ctx.token_budget == 8000


def test_build_context_sys_over_budget():
    cfg = RunConfig(token_budget=10)
    with pytest.raises(BudgetImpossible):
        build_context(node("a", "functional", ["x"]), None, (), cfg, sys_prompt="y" * 41)
    build_context(node("a", "functional", ["x"]), None, (), cfg, sys_prompt="y" * 40)


def test_hundred_descriptors_fit_lm_budget(tmp_path):
    ws = Workspace(tmp_path)
    for i in range(100):
        ws.put(f"data/file{i:03d}.bin", b"x" * (i * 997), "d" * 400 + f" file {i}")
    cfg = RunConfig()
    ctx = build_context(node("a", "functional", ["x"]), ws, (), cfg)
    assert 0 < ctx.lm_size() <= cfg.lm_budget == 1200
    assert ctx.lm_index[-1].addr is None and "more files" in ctx.lm_index[-1].text


def test_visible_restricts_index(ws):
    ws.put("a.txt", b"a", "first")
    ws.put("b.txt", b"b", "second")
    ctx = build_context(node("a", "functional", ["x"]), ws, (), visible=["b.txt"])
    assert [e.addr for e in ctx.lm_index] == ["b.txt"]


def test_append_small_record_no_compression():
    ctx = ExecutionContext(sys="s", tau=1000)
    hist = HistoryLog()
    append_interaction(ctx, InteractionRecord("tool_call", "x" * 40), hist)
    assert len(ctx.env_log) == 1 and ctx.env_log[0].kind is RecordKind.TOOL_CALL
    assert hist.size == 10


def test_append_compresses_minimal_prefix():
    ctx = ExecutionContext(sys="s", tau=100, token_budget=4000)
    hist = HistoryLog()
    for i in range(25):
        append_interaction(ctx, InteractionRecord("tool_result", f"{i:016d}"), hist)
    assert ctx.env_size() == 100 and all(r.kind is not RecordKind.SUMMARY for r in ctx.env_log)
    log_before = list(ctx.env_log) + [InteractionRecord("tool_result", "z" * 16)]
    append_interaction(ctx, log_before[-1], hist)
    assert ctx.env_size() <= 100
    head = ctx.env_log[0]
    assert head.kind is RecordKind.SUMMARY
    k = len(log_before) - (len(ctx.env_log) - 1)
    assert head.content.startswith(f"[summary of {k} records]")
    # one record fewer in the prefix would not have re-entered the limit
    shorter = compress(log_before[: k - 1])
    assert char_tokens(shorter.content) + 4 * (len(log_before) - k + 1) > 100
    assert ctx.env_log[-1] == log_before[-1]
    assert hist.size == 26 * 4 and len(hist) == 26


def test_single_record_over_tau_escalates():
    ctx = ExecutionContext(sys="s", tau=10)
    append_interaction(ctx, InteractionRecord("tool_call", "x" * 40))
    with pytest.raises(BudgetImpossible):
        append_interaction(ctx, InteractionRecord("tool_call", "x" * 44))


def test_summary_records_only_from_compress():
    with pytest.raises(ValueError):
        append_interaction(ExecutionContext(sys="s"), InteractionRecord("summary", "fake"))


def test_compress_singleton_keeps_content():
    rec = InteractionRecord("feedback", "retry with the right file name")
    assert "retry with the right file name" in compress([rec]).content


def test_compress_ten_units_golden():
    summary = compress([unit(i) for i in range(10)])
    assert summary.kind is RecordKind.SUMMARY and summary.source == "mock"
    assert summary.content == (GOLDEN / "compress_10_unit.txt").read_text()


def test_compress_respects_target():
    recs = [InteractionRecord("tool_result", "w" * 4000) for _ in range(5)]
    out = compress(recs)
    assert char_tokens(out.content) <= max(math.ceil(0.25 * 5000), 64)


def test_compress_executor_mode_and_fallback():
    class Broken:
        def invoke(self, *a, **k):
            from agentdag.errors import ExecutorFailure

            raise ExecutorFailure("down")

    recs = [unit(i) for i in range(3)]
    assert compress(recs, Broken()).source == "mock-fallback"
    assert compress(recs, MockExecutor()).kind is RecordKind.SUMMARY


RECORDS = st.lists(
    st.builds(InteractionRecord, st.sampled_from(["tool_call", "tool_result", "feedback"]), st.text(max_size=600)),
    min_size=1,
    max_size=12,
)


@given(RECORDS)
def test_compress_is_monotone_non_expanding(records):
    once = compress(records)
    twice = compress([once])
    assert char_tokens(twice.content) <= char_tokens(once.content)


@given(st.lists(st.integers(1, 120), min_size=1, max_size=80), st.integers(130, 400))
def test_log_stays_within_tau_and_keeps_newest(sizes, tau):
    ctx = ExecutionContext(sys="s", tau=tau, token_budget=4 * tau)
    hist = HistoryLog()
    for i, n in enumerate(sizes):
        rec = InteractionRecord("tool_result", ("%d:" % i).ljust(4 * n, "x"))
        append_interaction(ctx, rec, hist)
        assert ctx.env_size() <= tau
        assert measure(ctx) <= ctx.token_budget
        assert ctx.env_log[-1] == rec
    assert hist.size == sum(char_tokens(("%d:" % i).ljust(4 * n, "x")) for i, n in enumerate(sizes))
