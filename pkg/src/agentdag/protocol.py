"""Strict JSON output contract, artifact references, and request envelopes."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .errors import ContractViolation

OUTPUT_CONTRACT = """\
Finish the task before answering. Your whole reply must be one JSON object and nothing else:
{"status": "success" | "error", "output": "<summary>", "error_information": "<reason, only when status is error>"}
List every file you produced in "output", one per line, as `ref: <relative path> :: <short description>`.
Do not paste file contents into "output"."""

STATUSES = ("success", "error")
_FIELDS = ("status", "output", "error_information")


@dataclass(frozen=True)
class AgentOutput:
    status: str
    output: str = ""
    error_information: str = ""

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ContractViolation(f"status must be one of {STATUSES}, got {self.status!r}")
        if not isinstance(self.output, str) or not isinstance(self.error_information, str):
            raise ContractViolation("output and error_information must be strings")

    def contract_problems(self) -> list[str]:
        """Consistency rules between status and error_information."""
        problems = []
        if self.status == "error" and not self.error_information.strip():
            problems.append("status=error requires non-empty error_information")
        if self.status == "success" and self.error_information:
            problems.append("error_information must be empty when status=success")
        return problems

    @classmethod
    def success(cls, output: str) -> AgentOutput:
        return cls("success", output, "")

    @classmethod
    def failure(cls, error_information: str, output: str = "") -> AgentOutput:
        return cls("error", output, error_information or "unspecified error")

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def to_dict(self) -> dict[str, str]:
        return {"status": self.status, "output": self.output, "error_information": self.error_information}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_obj(cls, obj: Any) -> AgentOutput:
        if not isinstance(obj, dict):
            raise ContractViolation("output must be a JSON object")
        keys = set(obj)
        if keys != set(_FIELDS):
            missing = sorted(set(_FIELDS) - keys)
            extra = sorted(keys - set(_FIELDS))
            raise ContractViolation(f"bad fields: missing={missing} extra={extra}")
        out = cls(obj["status"], obj["output"], obj["error_information"])
        problems = out.contract_problems()
        if problems:
            raise ContractViolation("; ".join(problems))
        return out

    @classmethod
    def from_json(cls, text: str) -> AgentOutput:
        """Parse a reply that must be exactly one JSON object."""
        try:
            obj = json.loads(text)
        except (json.JSONDecodeError, TypeError) as exc:
            raise ContractViolation(f"malformed JSON: {exc}", raw=text) from None
        return cls.from_obj(obj)

    def refs(self) -> list[tuple[str, str]]:
        return parse_refs(self.output)


def extract_json_object(text: str) -> str | None:
    """First balanced JSON object embedded in ``text`` (prose or fences around it)."""
    decoder = json.JSONDecoder()
    for match in re.finditer(r"\{", text):
        try:
            obj, end = decoder.raw_decode(text, match.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return text[match.start() : end]
    return None


def parse_reply(text: str) -> AgentOutput:
    """Lenient parse used for model replies: accept prose around the object."""
    try:
        return AgentOutput.from_json(text.strip())
    except ContractViolation as exc:
        candidate = extract_json_object(text)
        if candidate is None or candidate == text.strip():
            raise ContractViolation(str(exc), raw=text) from None
        return AgentOutput.from_json(candidate)


# -- artifact references ----------------------------------------------------

_REF_RE = re.compile(r"^\s*ref:\s*(?P<addr>\S+)\s*::\s*(?P<desc>.*?)\s*$", re.MULTILINE)


def format_ref(addr: str, desc: str) -> str:
    return f"ref: {addr} :: {' '.join(desc.split())}"


def parse_refs(text: str) -> list[tuple[str, str]]:
    return [(m.group("addr"), m.group("desc")) for m in _REF_RE.finditer(text)]


def inline_text(text: str) -> str:
    """The part of an output that is not reference lines."""
    return _REF_RE.sub("", text).strip()


# -- requests ---------------------------------------------------------------


class Action(str, Enum):
    DECOMPOSE = "decompose"
    EXECUTE = "execute"
    MERGE = "merge"
    VALIDATE = "validate"
    JUDGE = "judge"
    COVERAGE = "coverage"
    SUMMARIZE = "summarize"
    DESCRIBE = "describe"


_INSTRUCTIONS = {
    Action.DECOMPOSE: (
        "Split the task into at most {k_max} sub-tasks that together cover it. Put a JSON array in "
        '"output"; each item is a string or {{"task": str, "agent": optional child id, "writes": [paths]}}.'
    ),
    Action.EXECUTE: "Carry out the task with your tools and report the files you produced.",
    Action.MERGE: "Combine the child results into one answer for the task. Reference child files, do not copy them.",
    Action.VALIDATE: 'Rate how well the output satisfies the task. Put a number between 0 and 1 in "output".',
    Action.JUDGE: (
        "Verify, without redoing the task and without writing anything, whether the reported output satisfies "
        "the task. File names and format must match what the task asks for. Answer success or error."
    ),
    Action.COVERAGE: (
        'Does the union of the sub-tasks cover the whole parent task? Put "covered" in "output", or a '
        "JSON array of the missing aspects."
    ),
    Action.SUMMARIZE: "Summarize the records below briefly, keeping file paths and outcomes.",
    Action.DESCRIBE: "Write a one-sentence description of the artifact.",
}

_MARKER = "REQUEST JSON:"


def render_request(action: Action | str, **payload: Any) -> str:
    action = Action(action)
    body = {"action": action.value, **payload}
    instr = _INSTRUCTIONS[action].format(k_max=payload.get("k_max", "K"))
    return f"{instr}\n\n{_MARKER}\n{json.dumps(body, ensure_ascii=False, sort_keys=True, indent=1)}"


def parse_request(text: str) -> dict[str, Any]:
    idx = text.rfind(_MARKER)
    if idx < 0:
        raise ValueError("request carries no JSON envelope")
    return json.loads(text[idx + len(_MARKER) :])
