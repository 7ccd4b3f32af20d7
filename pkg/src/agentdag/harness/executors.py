"""Executor backends: the seam between the orchestrator and whatever does the work.

An executor answers ``invoke(role_prompt, context, request)`` with an
:class:`~agentdag.protocol.AgentOutput`. Requests are rendered by
:func:`agentdag.protocol.render_request` and carry a JSON envelope, which the
deterministic backends here parse instead of reading prose.
"""

from __future__ import annotations

import json
import posixpath
import re
import threading
import time
from typing import Protocol, runtime_checkable

from ..context import ExecutionContext
from ..errors import ContractViolation, ExecutorFailure, ExecutorTimeout, UnmatchedRequest
from ..protocol import AgentOutput, format_ref, parse_request
from ..text import token_gaps
from .scenario import Scenario, ScenarioEntry


@runtime_checkable
class Executor(Protocol):
    concurrency_limit: int

    def invoke(self, role_prompt: str, context: ExecutionContext | None, request: str) -> AgentOutput: ...


def _tools(ctx: ExecutionContext | None):
    tools = getattr(ctx, "tools", None)
    if tools is None:
        raise ExecutorFailure("no tools available for this invocation")
    return tools


def _merge_concat(payload: dict) -> AgentOutput:
    children = payload.get("children") or []
    lines = [f"merged {len(children)} results for {payload.get('task_id')}"]
    for child in children:
        for addr, desc in child.get("refs") or ():
            lines.append(format_ref(addr, desc))
    return AgentOutput.success("\n".join(lines))


def _coverage_answer(payload: dict) -> AgentOutput:
    gaps = token_gaps(payload.get("task", ""), payload.get("subtasks") or [])
    return AgentOutput.success("covered" if not gaps else json.dumps(gaps))


class MockExecutor:
    """Scenario-free deterministic executor.

    Decomposes on ``;`` / ``and`` / ``then``, writes one text artifact per
    atom (or the files the task declares), concatenates on merge and accepts
    everything it is asked to review.
    """

    scripted = True
    summarizes = False

    def __init__(self, concurrency_limit: int = 64, delay: float = 0.0) -> None:
        self.concurrency_limit = concurrency_limit
        self.delay = delay
        self.calls = 0
        self._lock = threading.Lock()
        self.tokens_used = 0

    def invoke(self, role_prompt: str, context: ExecutionContext | None, request: str) -> AgentOutput:
        with self._lock:
            self.calls += 1
        payload = parse_request(request)
        action = payload["action"]
        task_id = payload.get("task_id", "")
        text = payload.get("task", "")
        if action == "decompose":
            parts = [p.strip(" ,.") for p in re.split(r";|\band\b|\bthen\b", text) if p.strip(" ,.")]
            return AgentOutput.success(json.dumps(parts or [text]))
        if action == "execute":
            if self.delay:
                time.sleep(self.delay)
            tools = _tools(context)
            targets = list(payload.get("writes") or ()) or [f"out/{task_id}.txt"]
            lines = [f"completed {task_id}"]
            for addr in targets:
                addr, desc = tools.file_write(addr, text.encode("utf-8"), f"result of {task_id}")
                lines.append(format_ref(addr, desc))
            return AgentOutput.success("\n".join(lines))
        if action == "merge":
            return _merge_concat(payload)
        if action == "validate":
            return AgentOutput.success("1.0")
        if action == "judge":
            return AgentOutput.success(f"verified {task_id}")
        if action == "coverage":
            return _coverage_answer(payload)
        if action == "describe":
            return AgentOutput.success(f"artifact {payload.get('addr', '')}")
        if action == "summarize":
            records = payload.get("records") or []
            return AgentOutput.success(f"{len(records)} records summarized")
        raise UnmatchedRequest(f"mock executor cannot answer action {action!r}")


class ScriptedExecutor:
    """Deterministic executor driven by a :class:`Scenario`."""

    scripted = True
    summarizes = False

    def __init__(self, scenario: Scenario, concurrency_limit: int = 64) -> None:
        self.scenario = scenario
        self.concurrency_limit = concurrency_limit
        self.tokens_used = 0

    def invoke(self, role_prompt: str, context: ExecutionContext | None, request: str) -> AgentOutput:
        return mock_invoke(self.scenario, request, context)


def _response(scenario: Scenario, text: str, action: str) -> tuple[ScenarioEntry | None, object]:
    entry = scenario.lookup(text, action)
    if entry is not None:
        return entry, entry.responses[action]
    if action in scenario.defaults:
        return scenario.matching(text), scenario.defaults[action]
    raise UnmatchedRequest(f"scenario {scenario.name!r} has no {action!r} answer for task {text[:80]!r}")


def _fault(entry: ScenarioEntry | None, attempt: int, *names: str) -> str | None:
    if entry is not None and entry.fault in names and entry.fault_active(attempt):
        return entry.fault
    return None


def _wrong_name(addr: str) -> str:
    head, tail = posixpath.split(addr)
    return posixpath.join(head, "wrong_" + tail) if head else "wrong_" + tail


def mock_invoke(scenario: Scenario, request: str, context: ExecutionContext | None = None) -> AgentOutput:
    """Answer ``request`` from ``scenario``; raise :class:`UnmatchedRequest` if it has no answer."""
    payload = parse_request(request)
    action = payload["action"]
    text = payload.get("task", "")
    task_id = payload.get("task_id", "")
    attempt = int(payload.get("attempt", 1))

    if action == "decompose":
        entry, spec = _response(scenario, text, "decompose")
        items = list(spec or ())
        # the re-request after an oversized proposal counts as the next attempt
        if _fault(entry, attempt + int(payload.get("round", 0)), "oversized"):
            k_max = int(payload.get("k_max", 5))
            i = 0
            while len(items) < k_max + 2:
                i += 1
                items.append(f"{text} (extra part {i})")
        return AgentOutput.success(json.dumps(items))

    if action == "execute":
        entry, spec = _response(scenario, text, "atom")
        return _atom(entry, spec or {}, payload, context, attempt)

    if action == "merge":
        entry, spec = _response(scenario, text, "merge")
        if _fault(entry, attempt, "malformed"):
            raise ContractViolation("malformed JSON", raw='{"status": "success", "output": ')
        if spec == "concat":
            return _merge_concat(payload)
        out = _merge_concat(payload)
        return AgentOutput.success(f"{spec}\n" + "\n".join(out.output.splitlines()[1:]))

    if action == "validate":
        entry = scenario.lookup(text, "validate")
        if entry is not None:
            spec = entry.responses["validate"]
        else:
            entry = scenario.matching(text)
            if entry is not None and entry.expect is not None:
                spec = "expect"
            else:
                spec = scenario.defaults.get("validate", 1.0)
        if spec == "expect":
            produced = (payload.get("output") or {}).get("output", "")
            return AgentOutput.success("1.0" if entry.expect in produced else "0.0")
        return AgentOutput.success(str(float(spec)))

    if action == "judge":
        entry, spec = _response(scenario, text, "judge")
        if _fault(entry, attempt, "judge_write"):
            _tools(context).file_write("judge_notes.txt", b"the judge should not write", "note")
        verdict = spec if isinstance(spec, str) else (spec or {}).get("verdict", "success")
        if str(verdict).startswith("success"):
            return AgentOutput.success(f"verified {task_id}")
        reason = verdict.split(":", 1)[1].strip() if ":" in str(verdict) else "judge rejected the output"
        return AgentOutput.failure(reason, f"rejected {task_id}")

    if action == "coverage":
        try:
            _, spec = _response(scenario, text, "coverage")
        except UnmatchedRequest:
            spec = "tokens"
        if spec in ("tokens", None):
            return _coverage_answer(payload)
        return AgentOutput.success(spec if spec == "covered" else json.dumps(list(spec)))

    if action == "summarize":
        _, spec = _response(scenario, text, "summary")
        return AgentOutput.success(str(spec))

    if action == "describe":
        addr = payload.get("addr", "")
        try:
            _, spec = _response(scenario, addr, "describe")
        except UnmatchedRequest:
            spec = f"artifact {addr}"
        return AgentOutput.success(str(spec))

    raise UnmatchedRequest(f"unknown action {action!r}")


def _atom(entry, spec: dict, payload: dict, context, attempt: int) -> AgentOutput:
    task_id = payload.get("task_id", "")
    if spec.get("delay"):
        time.sleep(float(spec["delay"]))
    if _fault(entry, attempt, "timeout"):
        raise ExecutorTimeout(f"scripted timeout for {task_id}")
    if _fault(entry, attempt, "malformed"):
        raise ContractViolation("malformed JSON", raw='{"status": "success", "output": "half')
    if spec.get("status") == "error":
        return AgentOutput.failure(spec.get("error", "scripted failure"), spec.get("output", ""))

    lines = [spec.get("output") or f"completed {task_id}"]
    artifacts = spec.get("artifacts") or ()
    if artifacts:
        tools = _tools(context)
        wrong = _fault(entry, attempt, "wrong_name")
        for art in artifacts:
            addr = art["addr"]
            if wrong:
                addr = _wrong_name(addr)
            content = art.get("content", "")
            if "size" in art:
                content = (content or "x") * int(art["size"])
            addr, desc = tools.file_write(addr, content.encode("utf-8"), art.get("desc"))
            lines.append(format_ref(addr, desc))
    if _fault(entry, attempt, "dangling"):
        lines.append(format_ref(f"missing/{task_id}.out", "file that was never written"))
    return AgentOutput.success("\n".join(lines))
