"""Tool access handed to executors through ``ExecutionContext.tools``.

Every call is checked against the agent's permitted tool names and recorded
as a tool_call/tool_result pair in the caller's interaction log.
"""

from __future__ import annotations

import threading

from .context import ExecutionContext, HistoryLog, InteractionRecord, RecordKind, append_interaction
from .errors import ToolNotPermitted
from .protocol import format_ref
from .workspace import ReadOnlyWorkspace


class Toolbox:
    def __init__(
        self,
        ws,
        agent_id: str,
        allowed: frozenset[str] | set[str],
        ctx: ExecutionContext | None = None,
        hist: HistoryLog | None = None,
    ) -> None:
        self.ws = ws
        self.agent_id = agent_id
        self.allowed = frozenset(allowed)
        self.ctx = ctx
        self.hist = hist
        self.written: list[tuple[str, str]] = []
        self.last_request = ""
        self._lock = threading.Lock()

    def _check(self, tool: str) -> None:
        if tool not in self.allowed:
            raise ToolNotPermitted(f"agent {self.agent_id!r} may not use {tool!r}")

    def _log(self, tool: str, call: str, result: str) -> None:
        if self.ctx is None:
            return
        append_interaction(self.ctx, InteractionRecord(RecordKind.TOOL_CALL, call, tool), self.hist)
        append_interaction(self.ctx, InteractionRecord(RecordKind.TOOL_RESULT, result, tool), self.hist)

    def file_read(self, addr: str) -> bytes:
        self._check("file_read")
        data = self.ws.get(addr)
        self._log("file_read", f"file_read {addr}", f"{len(data)} bytes")
        return data

    def dir_list(self, prefix: str = "") -> list[str]:
        self._check("dir_list")
        names = self.ws.list(prefix)
        self._log("dir_list", f"dir_list {prefix or '.'}", f"{len(names)} entries")
        return names

    def file_write(self, addr: str, content: bytes | str, desc: str | None = None) -> tuple[str, str]:
        """Store an artifact; returns ``(addr, descriptor text)``."""
        if isinstance(self.ws, ReadOnlyWorkspace):
            self.ws.put(addr, content, desc)  # raises VerifyOnlyViolation
        self._check("file_write")
        if isinstance(content, str):
            content = content.encode("utf-8")
        addr, d = self.ws.put(addr, content, desc)
        with self._lock:
            self.written.append((addr, d.text))
        self._log("file_write", f"file_write {addr}", format_ref(addr, d.text))
        return addr, d.text
