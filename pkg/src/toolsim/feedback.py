"""Task feedback: a checklist derived from the task, and a judge over it."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, Iterable

from .llm import LlmBackend, LlmRequest, parse_json_object
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptLibrary
from .responses import CallRecord
from .schema import ToolSchema
from .state import TaskState

log = logging.getLogger(__name__)

UNCHECKED, SATISFIED, UNSATISFIED = "unchecked", "satisfied", "unsatisfied"
SUCCESS, INCOMPLETE = "success", "incomplete"


@dataclass(frozen=True)
class ChecklistItem:
    id: str
    objective_text: str
    status: str = UNCHECKED

    def to_dict(self) -> dict[str, str]:
        return {"id": self.id, "objective_text": self.objective_text, "status": self.status}


@dataclass(frozen=True)
class Checklist:
    items: tuple[ChecklistItem, ...]

    def to_dict(self) -> dict[str, Any]:
        return {"items": [i.to_dict() for i in self.items]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Checklist:
        return cls(tuple(ChecklistItem(i["id"], i["objective_text"], i.get("status", UNCHECKED)) for i in data["items"]))

    def with_statuses(self, statuses: dict[str, str]) -> Checklist:
        return Checklist(tuple(replace(i, status=statuses.get(i.id, UNSATISFIED)) for i in self.items))


@dataclass(frozen=True)
class TaskFeedback:
    verdict: str
    remaining: tuple[str, ...]
    checklist: Checklist
    rationale: str = ""

    @property
    def success(self) -> bool:
        return self.verdict == SUCCESS

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "remaining": list(self.remaining),
            "checklist": self.checklist.to_dict(),
            "rationale": self.rationale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TaskFeedback:
        return cls(data["verdict"], tuple(data.get("remaining", ())), Checklist.from_dict(data["checklist"]), data.get("rationale", ""))


def _feedback_from(checklist: Checklist, statuses: dict[str, str], rationale: str) -> TaskFeedback:
    final = checklist.with_statuses(statuses)
    remaining = tuple(i.objective_text for i in final.items if i.status != SATISFIED)
    # verdict derives from item statuses only, so a model claiming success cannot override a failed item
    return TaskFeedback(SUCCESS if not remaining else INCOMPLETE, remaining, final, rationale)


def generate_checklist(
    task: str,
    history: list[Any] | None,
    rules: str | None,
    llm: LlmBackend,
    prompts: PromptLibrary = DEFAULT_PROMPTS,
    session_id: str | None = None,
) -> Checklist:
    if not task or not task.strip():
        raise ValueError("task description must be non-empty")
    payload = {"task": task, "conversation": history or [], "rules": rules or ""}
    feedback = None
    for _ in range(2):
        text = llm.complete(LlmRequest("checklist", prompts.render("checklist", payload, feedback), session_id=session_id))
        answer = parse_json_object(text)
        items = answer.get("items") if answer else None
        if isinstance(items, list) and items:
            return _normalize_items(items)
        feedback = {"error": "The previous answer was not a JSON object with a non-empty 'items' list.", "previous_answer": text[:2000]}
    log.warning("checklist output unparseable; using the task itself as the only objective")
    return Checklist((ChecklistItem("c1", task.strip()),))


def _normalize_items(raw: list[Any]) -> Checklist:
    items, seen = [], set()
    for n, entry in enumerate(raw, 1):
        if isinstance(entry, dict):
            text = str(entry.get("objective") or entry.get("objective_text") or "").strip()
            item_id = str(entry.get("id") or "")
        else:
            text, item_id = str(entry).strip(), ""
        if not text:
            continue
        if not item_id or item_id in seen:
            item_id = f"c{n}"
            while item_id in seen:
                item_id += "_"
        seen.add(item_id)
        items.append(ChecklistItem(item_id, text))
    if not items:
        raise ValueError("checklist has no usable items")
    return Checklist(tuple(items))


def _render_calls(calls: Iterable[CallRecord | dict]) -> list[dict[str, Any]]:
    out = []
    for record in calls:
        if isinstance(record, dict):
            out.append(record)
            continue
        entry: dict[str, Any] = {"tool_name": record.call.tool_name, "arguments": record.call.arguments}
        if record.response is not None:
            entry["response"] = {"body": record.response.body, "narrative": record.response.narrative}
        elif record.report is not None and not record.report.passed:
            entry["rejected"] = [v.to_dict() for v in record.report.violations]
        out.append(entry)
    return out


def judge(
    checklist: Checklist,
    state: TaskState,
    calls: Iterable[CallRecord | dict],
    task: str,
    history: list[Any] | None,
    schemas: Iterable[ToolSchema],
    llm: LlmBackend,
    final_answer: str = "",
    prompts: PromptLibrary = DEFAULT_PROMPTS,
    session_id: str | None = None,
) -> TaskFeedback:
    """Check each item; anything the judge does not affirm stays unsatisfied."""
    payload = {
        "task": task,
        "checklist": [{"id": i.id, "objective": i.objective_text} for i in checklist.items],
        "task_state": state.as_dict(),
        "tool_calls": _render_calls(calls),
        "final_answer": final_answer,
        "conversation": history or [],
        "tools": [s.to_document() for s in sorted(schemas, key=lambda s: s.tool_name)],
    }
    feedback = None
    for _ in range(2):
        text = llm.complete(LlmRequest("judge", prompts.render("judge", payload, feedback), session_id=session_id))
        answer = parse_json_object(text)
        items = answer.get("items") if answer else None
        if isinstance(items, list):
            statuses = {}
            for entry in items:
                if isinstance(entry, dict) and "id" in entry:
                    statuses[str(entry["id"])] = SATISFIED if entry.get("satisfied") is True else UNSATISFIED
            rationale = answer.get("rationale", "")
            return _feedback_from(checklist, statuses, rationale if isinstance(rationale, str) else str(rationale))
        feedback = {"error": "The previous answer was not a JSON object with an 'items' list of per-item verdicts.", "previous_answer": text[:2000]}
    log.warning("judge output unparseable; failing closed")
    return _feedback_from(checklist, {}, "judge output could not be parsed; no objective is confirmed")


def naive_gate(checklist: Checklist, calls: list[Any]) -> TaskFeedback:
    """Ablation stand-in for the judge: success iff any tool call was made."""
    if calls:
        return _feedback_from(checklist, {i.id: SATISFIED for i in checklist.items}, "tool calls were produced")
    return _feedback_from(checklist, {}, "no tool calls were produced")
