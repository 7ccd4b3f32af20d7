"""Four-part bounded execution context with threshold-triggered compression.

An :class:`ExecutionContext` holds the system prompt, a compressed index of
workspace descriptors, the active call stack, and the environment interaction
log. The log is compressed whenever it outgrows ``tau`` (or whatever headroom
the other three parts leave under ``token_budget``), while the run-wide
:class:`HistoryLog` keeps every record uncompressed.
"""

from __future__ import annotations

import logging
import math
import threading
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Any

from .config import RunConfig
from .errors import BudgetImpossible, ContractViolation, ExecutorFailure
from .graph import AgentNode
from .protocol import OUTPUT_CONTRACT, Action, render_request

if TYPE_CHECKING:
    from .workspace import Descriptor

logger = logging.getLogger(__name__)

TokenCounter = Callable[[str], int]


def char_tokens(text: str) -> int:
    """Default token proxy: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


class RecordKind(str, Enum):
    TOOL_CALL = "tool_call"
    TOOL_RESULT = "tool_result"
    FEEDBACK = "feedback"
    SUMMARY = "summary"


@dataclass(frozen=True)
class InteractionRecord:
    kind: RecordKind
    content: str
    source: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RecordKind(self.kind))
        if not isinstance(self.content, str):
            raise TypeError("record content must be text")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "content": self.content, "source": self.source}


@dataclass(frozen=True)
class StackFrame:
    agent: str
    role: str

    def render(self) -> str:
        return f"{self.agent}: {self.role}"


@dataclass(frozen=True)
class IndexEntry:
    """One line of the long-term memory index; ``addr`` is None for merged entries."""

    addr: str | None
    text: str

    def render(self) -> str:
        return f"{self.addr}: {self.text}" if self.addr else self.text


@dataclass
class ExecutionContext:
    sys: str
    lm_index: list[IndexEntry] = field(default_factory=list)
    shared_stack: list[StackFrame] = field(default_factory=list)
    env_log: list[InteractionRecord] = field(default_factory=list)
    token_budget: int = 8000
    tau: int = 2000
    counter: TokenCounter = field(default=char_tokens, repr=False, compare=False)
    compress_fraction: float = 0.25
    compress_floor: int = 64
    # Tool access for the invocation owning this context; never measured.
    tools: Any = field(default=None, repr=False, compare=False)

    # -- measurement ----------------------------------------------------------

    def sys_size(self) -> int:
        return self.counter(self.sys)

    def lm_size(self) -> int:
        return sum(self.counter(e.render()) for e in self.lm_index)

    def stack_size(self) -> int:
        return sum(self.counter(f.render()) for f in self.shared_stack)

    def env_size(self) -> int:
        return sum(self.counter(r.content) for r in self.env_log)

    def env_limit(self) -> int:
        """Room the interaction log may use: ``tau`` or less if the budget is tighter."""
        headroom = self.token_budget - self.sys_size() - self.lm_size() - self.stack_size()
        return min(self.tau, headroom)

    def render(self, request: str = "") -> str:
        """User-side prompt text in fixed order: index, stack, log, request."""
        parts = []
        if self.lm_index:
            parts.append("## Workspace index\n" + "\n".join(e.render() for e in self.lm_index))
        if self.shared_stack:
            parts.append("## Active call stack\n" + "\n".join(f.render() for f in self.shared_stack))
        if self.env_log:
            parts.append(
                "## Interaction log\n" + "\n".join(f"[{r.kind.value}] {r.content}" for r in self.env_log)
            )
        if request:
            parts.append("## Request\n" + request)
        return "\n\n".join(parts)

    def snapshot(self) -> dict[str, Any]:
        return {
            "sys": self.sys,
            "lm_index": [e.render() for e in self.lm_index],
            "shared_stack": [f.render() for f in self.shared_stack],
            "env_log": [r.to_dict() for r in self.env_log],
            "token_budget": self.token_budget,
            "tau": self.tau,
            "measure": measure(self),
        }


def measure(ctx: ExecutionContext) -> int:
    """Total context size: the sum of the four component sizes."""
    return ctx.sys_size() + ctx.lm_size() + ctx.stack_size() + ctx.env_size()


class HistoryLog:
    """Append-only, never-truncated log of everything a run produced."""

    def __init__(self, counter: TokenCounter = char_tokens) -> None:
        self._lock = threading.Lock()
        self._entries: list[tuple[str, str]] = []
        self._size = 0
        self.counter = counter

    def append(self, kind: str, text: str) -> int:
        with self._lock:
            self._entries.append((kind, text))
            self._size += self.counter(text)
            return self._size

    def record(self, rec: InteractionRecord) -> int:
        return self.append(rec.kind.value, rec.content)

    @property
    def size(self) -> int:
        with self._lock:
            return self._size

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def entries(self) -> list[tuple[str, str]]:
        with self._lock:
            return list(self._entries)


def _fit(text: str, units: int, counter: TokenCounter) -> str:
    """Longest prefix of ``text`` (with an ellipsis when cut) measuring <= ``units``."""
    if counter(text) <= units:
        return text
    if units <= 0:
        return ""
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if counter(text[:mid] + "…") <= units:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo] + "…" if lo else ""


def _mock_summary(records: Sequence[InteractionRecord], units: int, counter: TokenCounter) -> str:
    n = len(records)
    first, last = records[0], records[-1]
    header = f"[summary of {n} record{'s' if n != 1 else ''}]"
    if n == 1:
        lines = [header, f"{first.kind.value}: ", first.content]
    else:
        lines = [header, f"first {first.kind.value}: ", first.content, f"last {last.kind.value}: ", last.content]

    def assemble(parts: list[str]) -> str:
        if n == 1:
            return f"{parts[0]}\n{parts[1]}{parts[2]}"
        return f"{parts[0]}\n{parts[1]}{parts[2]}\n{parts[3]}{parts[4]}"

    text = assemble(lines)
    if counter(text) <= units:
        return text
    # Shrink the first record's content, then the last's, then the whole text.
    body_slots = [2] if n == 1 else [2, 4]
    for slot in body_slots:
        others = assemble(lines[:slot] + [""] + lines[slot + 1 :])
        room = units - counter(others)
        lines[slot] = _fit(lines[slot], max(room, 0), counter) if room > 0 else ""
        text = assemble(lines)
        if counter(text) <= units:
            return text
    return _fit(text, units, counter)


def compress(
    records: Sequence[InteractionRecord],
    executor=None,
    *,
    fraction: float = 0.25,
    floor: int = 64,
    max_units: int | None = None,
    counter: TokenCounter = char_tokens,
) -> InteractionRecord:
    """Collapse ``records`` into one summary record.

    The result measures at most ``max(ceil(fraction * input), floor)`` units,
    further capped by ``max_units``. Without an executor the summary keeps
    the first and last records verbatim plus a count, truncating if needed.
    A failing executor falls back to that form and marks ``source``.
    """
    if not records:
        raise ValueError("compress needs at least one record")
    size_in = sum(counter(r.content) for r in records)
    target = max(math.ceil(fraction * size_in), floor)
    if max_units is not None:
        target = min(target, max_units)

    if len(records) == 1 and records[0].kind is RecordKind.SUMMARY:
        only = records[0]
        if counter(only.content) <= target:
            return only
        return InteractionRecord(RecordKind.SUMMARY, _fit(only.content, target, counter), only.source)

    source = "mock"
    text = None
    if executor is not None:
        request = render_request(
            Action.SUMMARIZE,
            records=[r.to_dict() for r in records],
            max_tokens=target,
        )
        try:
            out = executor.invoke("You compress agent interaction logs.", None, request)
            if out.ok and out.output.strip():
                text = _fit(out.output, target, counter)
                source = "executor"
            else:
                raise ExecutorFailure(out.error_information or "empty summary")
        except (ExecutorFailure, ContractViolation) as exc:
            logger.warning("summarizer failed (%s); using mock summary", exc)
            source = "mock-fallback"
    if text is None:
        text = _mock_summary(records, target, counter)
    return InteractionRecord(RecordKind.SUMMARY, text, source)


def compress_descriptors(
    entries: Sequence[IndexEntry], budget: int, counter: TokenCounter = char_tokens
) -> list[IndexEntry]:
    """Fit descriptor lines into ``budget`` units, merging the overflow into one line."""
    entries = list(entries)
    sizes = [counter(e.render()) for e in entries]
    if sum(sizes) <= budget:
        return entries
    if budget <= 0:
        return []
    for keep in range(len(entries) - 1, -1, -1):
        used = sum(sizes[:keep])
        room = budget - used
        if room <= 0:
            continue
        rest = entries[keep:]
        dirs: dict[str, int] = {}
        for e in rest:
            key = (e.addr or "").split("/")[0] if e.addr and "/" in e.addr else "."
            dirs[key] = dirs.get(key, 0) + 1
        listing = ", ".join(f"{d}/ ({c})" for d, c in sorted(dirs.items()))
        merged = _fit(f"+{len(rest)} more files: {listing}", room, counter)
        if merged and counter(merged) <= room:
            return entries[:keep] + [IndexEntry(None, merged)]
    return []


def build_context(
    agent: AgentNode,
    ws=None,
    stack: Iterable[StackFrame] = (),
    cfg: RunConfig | None = None,
    *,
    visible: Iterable[str] | None = None,
    counter: TokenCounter = char_tokens,
    sys_prompt: str | None = None,
) -> ExecutionContext:
    """Fresh context for one invocation of ``agent``.

    Args:
        agent: The agent being invoked; supplies the system prompt.
        ws: Workspace (or read-only view) whose descriptors feed the index.
        stack: Frames from the root task's agent down to ``agent``.
        cfg: Budgets; defaults to :class:`RunConfig` defaults.
        visible: Restrict the index to these addresses.
    """
    cfg = cfg or RunConfig()
    sys = sys_prompt if sys_prompt is not None else f"{agent.system_prompt}\n\n{OUTPUT_CONTRACT}"
    ctx = ExecutionContext(
        sys=sys,
        shared_stack=list(stack),
        token_budget=cfg.token_budget,
        tau=cfg.tau,
        counter=counter,
        compress_fraction=cfg.compress_fraction,
        compress_floor=cfg.compress_floor,
    )
    if ctx.sys_size() > cfg.token_budget:
        raise BudgetImpossible(f"system prompt ({ctx.sys_size()}) exceeds token budget {cfg.token_budget}")
    if ws is not None:
        descs: dict[str, Descriptor] = ws.descriptors()
        if visible is not None:
            allowed = set(visible)
            descs = {a: d for a, d in descs.items() if a in allowed}
        entries = [IndexEntry(a, d.text) for a, d in sorted(descs.items())]
        ctx.lm_index = compress_descriptors(entries, cfg.lm_budget, counter)
    if measure(ctx) > cfg.token_budget:
        raise BudgetImpossible("system prompt plus call stack exceed the token budget")
    return ctx


def append_interaction(
    ctx: ExecutionContext,
    rec: InteractionRecord,
    hist: HistoryLog | None = None,
    executor=None,
) -> ExecutionContext:
    """Append ``rec``; if the log outgrows its limit, summarize the oldest prefix.

    The newest record always survives verbatim. The shortest prefix whose
    summary brings the log back under the limit is chosen; if none does, all
    older records collapse into a summary truncated to the remaining room.
    """
    if rec.kind is RecordKind.SUMMARY:
        raise ValueError("summary records are produced only by compress")
    if hist is not None:
        hist.record(rec)
    counter = ctx.counter
    limit = ctx.env_limit()
    rec_size = counter(rec.content)
    if rec_size > limit:
        raise BudgetImpossible(f"record of {rec_size} units cannot fit log limit {limit}")
    ctx.env_log.append(rec)
    if ctx.env_size() <= limit:
        return ctx

    log = ctx.env_log
    sizes = [counter(r.content) for r in log]
    opts = dict(fraction=ctx.compress_fraction, floor=ctx.compress_floor, counter=counter)
    for k in range(1, len(log)):
        tail = sum(sizes[k:])
        if tail >= limit:
            continue
        summary = compress(log[:k], executor, **opts)
        if counter(summary.content) + tail <= limit:
            ctx.env_log = [summary] + log[k:]
            return ctx
    room = limit - rec_size
    if room > 0 and len(log) > 1:
        summary = compress(log[:-1], executor, max_units=room, **opts)
        if summary.content:
            ctx.env_log = [summary, rec]
            return ctx
    ctx.env_log = [rec]
    return ctx
