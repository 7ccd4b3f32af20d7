"""Shared artifact store. Agents exchange ``(addr, desc)`` messages, never payloads.

On-disk layout under a run root::

    artifacts/<addr>        payload bytes
    inbox/<agent>.log       one JSON message per line, append-only
    index.jsonl             descriptor ledger: one record per put (addr, kind, size, text)

Every put is recorded in ``index.jsonl`` so overwrites of the same address keep
an audit trail; the in-memory index holds the last writer.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import posixpath
import re
import tempfile
import threading
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    AddressEscape,
    DanglingAddress,
    DescriptorTooLong,
    NotFound,
    StorageFailure,
    UnknownRecipient,
    VerifyOnlyViolation,
)
from .graph import AGENT_ID_LIMIT, check_agent_id

logger = logging.getLogger(__name__)

ADDRESS_LIMIT = 256
DESCRIPTOR_LIMIT = 512
KIND_LIMIT = 64
SIZE_DIGITS = 20  # enough for any 64-bit size

_ADDR_CHARS = re.compile(r"^[A-Za-z0-9._/-]+$")
_KIND_RE = re.compile(r"^[a-z0-9][a-z0-9/+._-]*$")


def _wire_len(text: str) -> int:
    """Characters ``text`` occupies inside a compact JSON string literal."""
    return len(json.dumps(text, ensure_ascii=False)) - 2


def normalize_address(value: str) -> str:
    """Normalize a workspace-relative path; reject anything escaping the root.

    A leading ``/`` is tolerated and means "relative to the task folder".
    """
    if not isinstance(value, str) or not value.strip():
        raise AddressEscape("address must be a non-empty string")
    raw = value.strip().replace("\\", "/")
    if "\x00" in raw:
        raise AddressEscape(f"address {value!r} contains NUL")
    parts = [p for p in raw.lstrip("/").split("/") if p not in ("", ".")]
    if any(p == ".." for p in parts):
        raise AddressEscape(f"address {value!r} escapes the workspace")
    norm = posixpath.join(*parts) if parts else ""
    if not norm:
        raise AddressEscape(f"address {value!r} names the workspace root")
    if len(norm) > ADDRESS_LIMIT:
        raise AddressEscape(f"address longer than {ADDRESS_LIMIT} characters")
    if not _ADDR_CHARS.match(norm):
        raise AddressEscape(f"address {value!r} has characters outside [A-Za-z0-9._/-]")
    return norm


@dataclass(frozen=True)
class Descriptor:
    text: str
    content_kind: str = "text/plain"
    size_bytes: int = 0
    limit: int = DESCRIPTOR_LIMIT

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("descriptor text must be non-empty")
        if _wire_len(self.text) > self.limit:
            raise DescriptorTooLong(f"descriptor of {_wire_len(self.text)} chars exceeds limit {self.limit}")
        if len(self.content_kind) > KIND_LIMIT or not _KIND_RE.match(self.content_kind):
            raise ValueError(f"bad content kind {self.content_kind!r}")
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be non-negative")

    def to_dict(self) -> dict:
        return {"text": self.text, "content_kind": self.content_kind, "size_bytes": self.size_bytes}


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    addr: str
    desc: Descriptor

    def __post_init__(self) -> None:
        check_agent_id(self.sender)
        check_agent_id(self.recipient)
        object.__setattr__(self, "addr", normalize_address(self.addr))

    def to_dict(self) -> dict:
        return {"from": self.sender, "to": self.recipient, "addr": self.addr, "desc": self.desc.to_dict()}

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> Message:
        d = data["desc"]
        desc = Descriptor(d["text"], d.get("content_kind", "text/plain"), int(d.get("size_bytes", 0)))
        return cls(data["from"], data["to"], data["addr"], desc)


_EMPTY_ENVELOPE = len(
    json.dumps(
        {"from": "", "to": "", "addr": "", "desc": {"text": "", "content_kind": "", "size_bytes": 0}},
        separators=(",", ":"),
    )
) - 1  # the literal "0"
ENVELOPE_OVERHEAD = _EMPTY_ENVELOPE + 2 * AGENT_ID_LIMIT + KIND_LIMIT + SIZE_DIGITS


def message_size_bound(descriptor_limit: int = DESCRIPTOR_LIMIT) -> int:
    """Upper bound on ``len(Message.serialize())`` regardless of payload size."""
    return ADDRESS_LIMIT + descriptor_limit + ENVELOPE_OVERHEAD


@dataclass(frozen=True)
class Receipt:
    recipient: str
    sequence: int
    inbox_length: int


def _guess_kind(addr: str) -> str:
    ext = posixpath.splitext(addr)[1].lower()
    return {
        ".py": "text/x-python",
        ".md": "text/markdown",
        ".json": "application/json",
        ".jsonl": "application/jsonl",
        ".txt": "text/plain",
        ".csv": "text/csv",
        ".tex": "text/x-tex",
    }.get(ext, "application/octet-stream")


def default_descriptor(addr: str, payload: bytes, limit: int = DESCRIPTOR_LIMIT) -> Descriptor:
    """Deterministic descriptor for artifacts stored without one."""
    first = payload[:200].decode("utf-8", errors="replace").splitlines()
    head = first[0].strip() if first else ""
    text = f"{addr} ({len(payload)} bytes)"
    if head:
        text += f": {head}"
    while _wire_len(text) > limit:
        text = text[: len(text) - max(1, _wire_len(text) - limit)]
    return Descriptor(text, _guess_kind(addr), len(payload), limit)


class Workspace:
    """Run-scoped artifact store with per-agent inboxes.

    Args:
        root: Directory for this run. Created if missing; a temp dir when ``None``.
        descriptor_limit: Maximum descriptor length in wire characters.
    """

    def __init__(self, root: str | Path | None = None, *, descriptor_limit: int = DESCRIPTOR_LIMIT) -> None:
        if root is None:
            root = tempfile.mkdtemp(prefix="agentdag-run-")
        self.root = Path(root)
        self.descriptor_limit = descriptor_limit
        self._lock = threading.RLock()
        self._index: dict[str, Descriptor] = {}
        self._inboxes: dict[str, list[Message]] = {}
        self._recipients: set[str] = set()
        self._seq = 0
        try:
            (self.root / "artifacts").mkdir(parents=True, exist_ok=True)
            (self.root / "inbox").mkdir(exist_ok=True)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        self._load_existing()

    def _load_existing(self) -> None:
        ledger = self.root / "index.jsonl"
        if ledger.exists():
            for line in ledger.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._index[rec["addr"]] = Descriptor(
                        rec["text"], rec["kind"], rec["size"], self.descriptor_limit
                    )
                    self._seq = max(self._seq, rec.get("seq", 0))
        for log in sorted((self.root / "inbox").glob("*.log")):
            msgs = [Message.from_dict(json.loads(l)) for l in log.read_text(encoding="utf-8").splitlines() if l]
            self._inboxes[log.stem] = msgs
            self._recipients.add(log.stem)

    # -- artifacts --------------------------------------------------------

    def _path(self, addr: str) -> Path:
        path = (self.root / "artifacts" / addr).resolve()
        base = (self.root / "artifacts").resolve()
        if base not in path.parents:
            raise AddressEscape(f"address {addr!r} resolves outside the workspace")
        return path

    def put(
        self,
        addr: str,
        payload: bytes,
        desc: Descriptor | str | None = None,
        *,
        describe: Callable[[str, bytes], str] | None = None,
    ) -> tuple[str, Descriptor]:
        """Store ``payload`` at ``addr`` and index its descriptor.

        ``desc`` may be a :class:`Descriptor`, plain text, or ``None``; when
        absent, ``describe(addr, payload)`` drafts the text if given, otherwise
        a deterministic default is used. Returns the ``(addr, desc)`` pair to
        put in a message.
        """
        addr = normalize_address(addr)
        if isinstance(payload, str):
            payload = payload.encode("utf-8")
        if desc is None and describe is not None:
            desc = describe(addr, payload)
        if desc is None:
            desc = default_descriptor(addr, payload, self.descriptor_limit)
        elif isinstance(desc, str):
            desc = Descriptor(desc, _guess_kind(addr), len(payload), self.descriptor_limit)
        else:
            desc = Descriptor(desc.text, desc.content_kind, len(payload), self.descriptor_limit)
        path = self._path(addr)
        with self._lock:
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".put-")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(payload)
                os.replace(tmp, path)
                self._seq += 1
                rec = {
                    "seq": self._seq,
                    "addr": addr,
                    "kind": desc.content_kind,
                    "size": desc.size_bytes,
                    "text": desc.text,
                    "sha256": hashlib.sha256(payload).hexdigest(),
                }
                with open(self.root / "index.jsonl", "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            except OSError as exc:
                raise StorageFailure(f"could not store {addr!r}: {exc}") from exc
            if addr in self._index:
                logger.debug("overwriting %s (last writer wins)", addr)
            self._index[addr] = desc
        return addr, desc

    def get(self, addr: str) -> bytes:
        addr = normalize_address(addr)
        with self._lock:
            if addr not in self._index:
                raise NotFound(f"no artifact at {addr!r}")
        return self._path(addr).read_bytes()

    def exists(self, addr: str) -> bool:
        try:
            addr = normalize_address(addr)
        except AddressEscape:
            return False
        with self._lock:
            return addr in self._index

    def descriptor(self, addr: str) -> Descriptor:
        addr = normalize_address(addr)
        with self._lock:
            try:
                return self._index[addr]
            except KeyError:
                raise NotFound(f"no artifact at {addr!r}") from None

    def descriptors(self) -> dict[str, Descriptor]:
        """Current descriptor index (last writer per address), sorted by address."""
        with self._lock:
            return dict(sorted(self._index.items()))

    def list(self, prefix: str = "") -> list[str]:
        with self._lock:
            return sorted(a for a in self._index if a.startswith(prefix))

    def audit_trail(self, addr: str | None = None) -> list[dict]:
        ledger = self.root / "index.jsonl"
        if not ledger.exists():
            return []
        recs = [json.loads(l) for l in ledger.read_text(encoding="utf-8").splitlines() if l.strip()]
        if addr is not None:
            addr = normalize_address(addr)
            recs = [r for r in recs if r["addr"] == addr]
        return recs

    def ledger_digest(self) -> str:
        """Hash of the descriptor ledger plus every stored payload."""
        h = hashlib.sha256()
        with self._lock:
            ledger = self.root / "index.jsonl"
            if ledger.exists():
                h.update(ledger.read_bytes())
            for addr in sorted(self._index):
                h.update(addr.encode())
                h.update(hashlib.sha256(self._path(addr).read_bytes()).digest())
        return h.hexdigest()

    # -- messaging --------------------------------------------------------

    def register(self, *agent_ids: str) -> None:
        with self._lock:
            for agent_id in agent_ids:
                self._recipients.add(check_agent_id(agent_id))
                self._inboxes.setdefault(agent_id, [])

    def send(self, msg: Message) -> Receipt:
        with self._lock:
            if msg.recipient not in self._recipients:
                raise UnknownRecipient(f"no inbox for {msg.recipient!r}")
            if msg.addr not in self._index:
                raise DanglingAddress(f"message references unstored address {msg.addr!r}")
            inbox = self._inboxes.setdefault(msg.recipient, [])
            inbox.append(msg)
            self._seq += 1
            try:
                with open(self.root / "inbox" / f"{msg.recipient}.log", "a", encoding="utf-8") as fh:
                    fh.write(msg.serialize() + "\n")
            except OSError as exc:
                inbox.pop()
                raise StorageFailure(str(exc)) from exc
            return Receipt(msg.recipient, self._seq, len(inbox))

    def inbox(self, agent_id: str) -> list[Message]:
        with self._lock:
            return list(self._inboxes.get(agent_id, ()))

    # -- views ------------------------------------------------------------

    def read_only(self) -> ReadOnlyWorkspace:
        return ReadOnlyWorkspace(self)

    def subspace(self, name: str) -> Workspace:
        """An isolated workspace rooted at ``<root>/branches/<name>``."""
        name = normalize_address(name).replace("/", "_")
        return Workspace(self.root / "branches" / name, descriptor_limit=self.descriptor_limit)


class ReadOnlyWorkspace:
    """Verify-only view: reads pass through, any mutation raises."""

    def __init__(self, ws: Workspace) -> None:
        self._ws = ws
        self.root = ws.root
        self.descriptor_limit = ws.descriptor_limit

    def get(self, addr: str) -> bytes:
        return self._ws.get(addr)

    def exists(self, addr: str) -> bool:
        return self._ws.exists(addr)

    def descriptor(self, addr: str) -> Descriptor:
        return self._ws.descriptor(addr)

    def descriptors(self) -> dict[str, Descriptor]:
        return self._ws.descriptors()

    def list(self, prefix: str = "") -> list[str]:
        return self._ws.list(prefix)

    def put(self, *args, **kwargs):
        raise VerifyOnlyViolation("verify-only participant attempted to write an artifact")

    def send(self, *args, **kwargs):
        raise VerifyOnlyViolation("verify-only participant attempted to send a message")
