"""Simulated tool responses, generated by the helper model and checked structurally."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .errors import GenError
from .llm import LlmBackend, LlmRequest, parse_json_object
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptLibrary
from .schema import ToolSchema
from .state import TaskState
from .validation import ArgViolation, ToolCall, check_value

REPAIR_ROUNDS = 2


@dataclass(frozen=True)
class SimulatedResponse:
    call_id: str
    body: Any
    narrative: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"call_id": self.call_id, "body": self.body, "narrative": self.narrative}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SimulatedResponse:
        return cls(data["call_id"], data.get("body"), data.get("narrative", ""))


def conformance_violations(schema: ToolSchema, body: Any) -> list[ArgViolation]:
    """Violations of the response schema; an absent schema demands ``{}``."""
    if schema.response_schema is None:
        return [] if body == {} else [ArgViolation("body", "type_mismatch", "this tool returns an empty object")]
    return check_value(schema.response_schema, body, "body")


def generate_response(
    call: ToolCall,
    schema: ToolSchema,
    state: TaskState,
    llm: LlmBackend,
    prompts: PromptLibrary = DEFAULT_PROMPTS,
    repair_rounds: int = REPAIR_ROUNDS,
) -> SimulatedResponse:
    payload = {
        "tool_call": {"tool_name": call.tool_name, "arguments": call.arguments},
        "schema": schema.to_document(),
        "task_state": state.as_dict(),
    }
    feedback = None
    violations: list[ArgViolation] = []
    for _ in range(repair_rounds + 1):
        prompt = prompts.render("response_generator", payload, feedback)
        text = llm.complete(LlmRequest("response_generator", prompt, session_id=call.session_id or None))
        answer = parse_json_object(text)
        if answer is None or "body" not in answer:
            violations = [ArgViolation("", "unparseable", "answer must be a JSON object with a 'body' field")]
        else:
            narrative = answer.get("narrative") or ""
            narrative = narrative if isinstance(narrative, str) else str(narrative)
            body = answer["body"]
            if schema.response_schema is None:
                # void-style tools: any answer collapses to an acknowledgment
                return SimulatedResponse(call.call_id, {}, narrative or "ok")
            violations = conformance_violations(schema, body)
            if not violations:
                return SimulatedResponse(call.call_id, body, narrative)
        feedback = {
            "error": "The previous answer did not match the response schema. Fix these problems.",
            "violations": [v.to_dict() for v in violations],
            "previous_answer": text[:4000],
        }
    raise GenError(
        "nonconforming_after_retries",
        f"response for {call.tool_name} still nonconforming after {repair_rounds} repair rounds",
        details=[v.to_dict() for v in violations],
    )


@dataclass(frozen=True)
class CallRecord:
    """One entry of a session's call log."""

    call: ToolCall
    report: Any
    response: SimulatedResponse | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "call": self.call.to_dict(),
            "report": self.report.to_dict() if self.report is not None else None,
            "response": self.response.to_dict() if self.response is not None else None,
        }
