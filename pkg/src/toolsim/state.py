"""Task state: a small key-value record of task progress."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Iterable

from . import canonical
from .llm import LlmBackend, LlmRequest, parse_json_object
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptLibrary
from .schema import ToolSchema

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskState:
    entries: tuple[tuple[str, str], ...] = ()
    version: int = 0
    derived_from_call: str | None = None

    @classmethod
    def of(cls, entries: dict[str, Any] | Iterable[tuple[str, Any]] = (), version: int = 0, derived_from_call: str | None = None) -> TaskState:
        items = entries.items() if isinstance(entries, dict) else entries
        # key order carries no meaning; sorting makes equal states compare equal
        return cls(tuple(sorted((str(k), _as_text(v)) for k, v in dict(items).items())), version, derived_from_call)

    def as_dict(self) -> dict[str, str]:
        return dict(self.entries)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.as_dict().get(key, default)

    def text(self) -> str:
        return "\n".join(f"{k}: {v}" for k, v in self.entries)

    def to_dict(self) -> dict[str, Any]:
        return {
            "entries": [[k, v] for k, v in self.entries],
            "version": self.version,
            "derived_from_call": self.derived_from_call,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TaskState:
        entries = data.get("entries", [])
        if isinstance(entries, dict):
            entries = list(entries.items())
        return cls.of(entries, int(data.get("version", 0)), data.get("derived_from_call"))


def _as_text(value: Any) -> str:
    if isinstance(value, str):
        return value
    return canonical.dumps(value)


def changed_keys(before: TaskState, after: TaskState) -> set[str]:
    """Keys whose value differs, including keys added or removed."""
    a, b = before.as_dict(), after.as_dict()
    return {k for k in a.keys() | b.keys() if a.get(k) != b.get(k)}


def _entries_from(text: str) -> list[tuple[str, Any]] | None:
    answer = parse_json_object(text)
    if answer is None or not isinstance(answer.get("entries"), dict):
        return None
    return list(answer["entries"].items())


_REASK = "The previous answer was not a JSON object with an 'entries' object of key-value pairs."


def bootstrap_state(
    task: str,
    schemas: Iterable[ToolSchema],
    llm: LlmBackend,
    prompts: PromptLibrary = DEFAULT_PROMPTS,
    session_id: str | None = None,
) -> TaskState:
    if not task or not task.strip():
        raise ValueError("task description must be non-empty")
    payload = {
        "task": task,
        "tools": [s.to_document() for s in sorted(schemas, key=lambda s: s.tool_name)],
    }
    feedback = None
    for _ in range(2):
        text = llm.complete(LlmRequest("state_bootstrapper", prompts.render("state_bootstrapper", payload, feedback), session_id=session_id))
        entries = _entries_from(text)
        if entries is not None:
            return TaskState.of(entries, 0, None)
        feedback = {"error": _REASK, "previous_answer": text[:2000]}
    log.warning("state bootstrapper output unparseable; starting from an empty state")
    return TaskState((), 0, None)


def update_state(
    prev: TaskState,
    call,
    response,
    llm: LlmBackend,
    prompts: PromptLibrary = DEFAULT_PROMPTS,
) -> TaskState:
    """Fold one executed call into the state.

    On two unparseable answers the previous entries carry forward unchanged.
    """
    if response.call_id != call.call_id:
        raise ValueError("response does not belong to this call")
    payload = {
        "previous_state": prev.as_dict(),
        "tool_call": {"tool_name": call.tool_name, "arguments": call.arguments},
        "response": {"body": response.body, "narrative": response.narrative},
    }
    feedback = None
    for _ in range(2):
        prompt = prompts.render("state_updater", payload, feedback)
        text = llm.complete(LlmRequest("state_updater", prompt, session_id=call.session_id or None))
        entries = _entries_from(text)
        if entries is not None:
            return TaskState.of(entries, prev.version + 1, call.call_id)
        feedback = {"error": _REASK, "previous_answer": text[:2000]}
    log.warning("state updater output unparseable after %s; carrying previous state forward", call.tool_name)
    return TaskState(prev.entries, prev.version + 1, call.call_id)
