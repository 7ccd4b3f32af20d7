"""Chat-completion executor over HTTP.

One request per invocation: the system message is the context's system part,
the user message is the rendered index, stack, log and request. The reply must
be the strict three-field JSON object; prose around it is tolerated, and a
reply that still cannot be parsed is re-asked exactly once with the parse
error attached.

Models cannot call tools in this single-shot mode, so an ``execute`` reply may
embed files as::

    <<<file out/result.md
    ...content...
    >>>

Each block is written through the agent's toolbox and replaced by its
reference line before the output reaches the orchestrator.
"""

from __future__ import annotations

import logging
import os
import re
import threading
from dataclasses import dataclass

import httpx

from ..context import ExecutionContext
from ..errors import AuthMissing, ContractViolation, Transport
from ..protocol import AgentOutput, format_ref, parse_reply, parse_request

logger = logging.getLogger(__name__)

DEFAULT_KEY_ENV = "AGENTDAG_API_KEY"
_FILE_BLOCK = re.compile(r"<<<file[ \t]+(?P<addr>\S+)[ \t]*\n(?P<body>.*?)\n?>>>", re.DOTALL)


@dataclass
class EndpointConfig:
    url: str
    model: str
    key_env: str = DEFAULT_KEY_ENV
    timeout: float = 120.0
    temperature: float = 0.0
    max_tokens: int | None = None
    concurrency_limit: int = 4

    @classmethod
    def from_dict(cls, d: dict) -> EndpointConfig:
        return cls(**d)


class HttpExecutor:
    """Executor backed by a chat-completion endpoint.

    The credential is read from ``cfg.key_env`` at call time and only ever
    placed in the Authorization header; it is never logged or stored.
    """

    scripted = False
    summarizes = True

    def __init__(self, cfg: EndpointConfig, *, client: httpx.Client | None = None) -> None:
        self.cfg = cfg
        self.concurrency_limit = cfg.concurrency_limit
        self._client = client
        self._lock = threading.Lock()
        self.tokens_used = 0
        self.calls = 0

    def __repr__(self) -> str:
        return f"<HttpExecutor url={self.cfg.url!r} model={self.cfg.model!r} key_env={self.cfg.key_env!r}>"

    def _key(self) -> str:
        key = os.environ.get(self.cfg.key_env, "").strip()
        if not key:
            raise AuthMissing(f"environment variable {self.cfg.key_env} is not set")
        return key

    def check_credentials(self) -> None:
        """Raise :class:`AuthMissing` now rather than on the first call."""
        self._key()

    def _post(self, messages: list[dict[str, str]], key: str) -> str:
        body: dict[str, object] = {
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        if self.cfg.max_tokens:
            body["max_tokens"] = self.cfg.max_tokens
        headers = {"Authorization": f"Bearer {key}"}
        try:
            if self._client is not None:
                resp = self._client.post(self.cfg.url, json=body, headers=headers, timeout=self.cfg.timeout)
            else:
                resp = httpx.post(self.cfg.url, json=body, headers=headers, timeout=self.cfg.timeout)
        except httpx.HTTPError as exc:
            raise Transport(f"request to {self.cfg.url} failed: {type(exc).__name__}") from None
        if resp.status_code >= 400:
            raise Transport(f"{self.cfg.url} answered HTTP {resp.status_code}")
        try:
            data = resp.json()
            content = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError):
            raise Transport(f"{self.cfg.url} returned an unexpected response shape") from None
        usage = data.get("usage") or {}
        with self._lock:
            self.calls += 1
            self.tokens_used += int(usage.get("total_tokens") or 0)
        return str(content)

    def invoke(self, role_prompt: str, context: ExecutionContext | None, request: str) -> AgentOutput:
        key = self._key()
        system = context.sys if context is not None else role_prompt
        user = context.render(request) if context is not None else request
        messages = [{"role": "system", "content": system}, {"role": "user", "content": user}]
        reply = self._post(messages, key)
        try:
            out = parse_reply(reply)
        except ContractViolation as exc:
            logger.info("reply broke the output contract (%s); re-asking once", exc)
            messages += [
                {"role": "assistant", "content": reply},
                {
                    "role": "user",
                    "content": f"Your reply could not be parsed: {exc}. "
                    "Return only the JSON object with status, output and error_information.",
                },
            ]
            reply = self._post(messages, key)
            out = parse_reply(reply)
        return self._materialize(out, context, request)

    def _materialize(self, out: AgentOutput, context: ExecutionContext | None, request: str) -> AgentOutput:
        if not out.ok or "<<<file" not in out.output:
            return out
        try:
            action = parse_request(request).get("action")
        except ValueError:
            action = None
        tools = getattr(context, "tools", None)
        if action != "execute" or tools is None:
            return out

        def write(m: re.Match) -> str:
            addr, desc = tools.file_write(m["addr"], m["body"].encode("utf-8"))
            return format_ref(addr, desc)

        return AgentOutput(out.status, _FILE_BLOCK.sub(write, out.output), out.error_information)
