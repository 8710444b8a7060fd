"""Argument validation: deterministic schema rules, then an optional LLM check."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Any

from .llm import LlmBackend, LlmRequest, parse_json_object
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptLibrary
from .schema import ParameterSpec, ToolSchema, json_type_matches, json_type_of

log = logging.getLogger(__name__)

PASS = "pass"
SYNTACTIC_ERROR = "syntactic_error"
SEMANTIC_ERROR = "semantic_error"


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: dict[str, Any] = field(default_factory=dict)
    call_id: str = ""
    session_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"tool_name": self.tool_name, "arguments": self.arguments, "call_id": self.call_id}


@dataclass(frozen=True)
class ArgViolation:
    parameter: str
    rule: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"parameter": self.parameter, "rule": self.rule, "message": self.message}


@dataclass(frozen=True)
class ValidationReport:
    verdict: str
    violations: tuple[ArgViolation, ...] = ()
    stage: str = "rules"

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "stage": self.stage,
            "violations": [v.to_dict() for v in self.violations],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ValidationReport:
        return cls(
            data["verdict"],
            tuple(ArgViolation(**v) for v in data.get("violations", ())),
            data.get("stage", "rules"),
        )


@dataclass(frozen=True)
class TaskContext:
    task: str = ""
    state_text: str = ""


def _show(value: Any) -> str:
    text = repr(value) if not isinstance(value, str) else f"'{value}'"
    return text if len(text) <= 60 else text[:57] + "..."


def check_value(spec: ParameterSpec, value: Any, path: str) -> list[ArgViolation]:
    """Structural check of one value against its spec, recursing into containers."""
    if not json_type_matches(value, spec.type):
        return [
            ArgViolation(
                path,
                "type_mismatch",
                f"'{path}' must be of type {spec.type}, got {json_type_of(value)} {_show(value)}",
            )
        ]
    out: list[ArgViolation] = []
    c = spec.constraints
    if c is not None:
        if c.minimum is not None and value < c.minimum:
            out.append(ArgViolation(path, "constraint:minimum", f"'{path}' must be >= {c.minimum}, got {value}"))
        if c.maximum is not None and value > c.maximum:
            out.append(ArgViolation(path, "constraint:maximum", f"'{path}' must be <= {c.maximum}, got {value}"))
        if c.enum_values is not None and value not in c.enum_values:
            allowed = ", ".join(_show(v) for v in c.enum_values)
            out.append(ArgViolation(path, "constraint:enum", f"'{path}' must be one of [{allowed}], got {_show(value)}"))
        if c.min_length is not None and len(value) < c.min_length:
            out.append(
                ArgViolation(path, "constraint:min_length", f"'{path}' must have at least {c.min_length} characters, got {len(value)}")
            )
        if c.max_length is not None and len(value) > c.max_length:
            out.append(
                ArgViolation(path, "constraint:max_length", f"'{path}' must have at most {c.max_length} characters, got {len(value)}")
            )
        if c.pattern is not None and re.search(c.pattern, value) is None:
            out.append(ArgViolation(path, "constraint:pattern", f"'{path}' must match pattern {c.pattern!r}, got {_show(value)}"))
    if spec.type == "array" and spec.items is not None:
        for i, item in enumerate(value):
            out.extend(check_value(spec.items, item, f"{path}[{i}]"))
    elif spec.type == "object" and spec.properties:
        out.extend(check_members(spec.properties, value, path + "."))
    return out


def check_members(specs: tuple[ParameterSpec, ...], values: dict[str, Any], prefix: str = "") -> list[ArgViolation]:
    out = []
    declared = {s.name for s in specs}
    for spec in specs:
        if spec.required and spec.name not in values:
            out.append(ArgViolation(prefix + spec.name, "missing_required", f"required parameter '{prefix}{spec.name}' is missing"))
    for name in values:
        if name not in declared:
            allowed = ", ".join(sorted(declared)) or "none"
            out.append(
                ArgViolation(prefix + name, "unknown_parameter", f"parameter '{prefix}{name}' is not defined (allowed: {allowed})")
            )
    for spec in specs:
        if spec.name in values:
            out.extend(check_value(spec, values[spec.name], prefix + spec.name))
    return out


def validate_syntactic(call: ToolCall, schema: ToolSchema) -> ValidationReport:
    if not isinstance(call.arguments, dict):
        v = ArgViolation("", "type_mismatch", "tool arguments must be a JSON object")
        return ValidationReport(SYNTACTIC_ERROR, (v,), "rules")
    violations = tuple(check_members(schema.parameters, call.arguments))
    return ValidationReport(SYNTACTIC_ERROR if violations else PASS, violations, "rules")


def validate_semantic(
    call: ToolCall,
    schema: ToolSchema,
    context: TaskContext,
    llm: LlmBackend,
    prompts: PromptLibrary = DEFAULT_PROMPTS,
) -> ValidationReport:
    """Ask the helper model whether the argument values make sense.

    An answer that cannot be parsed is re-asked once; a second bad answer
    counts as a pass (with a warning) rather than a rejection.
    """
    payload = {
        "tool_call": {"tool_name": call.tool_name, "arguments": call.arguments},
        "schema": schema.to_document(),
        "context": {"task": context.task, "task_state": context.state_text},
    }
    feedback = None
    for _ in range(2):
        prompt = prompts.render("semantic_validator", payload, feedback)
        text = llm.complete(LlmRequest("semantic_validator", prompt, session_id=call.session_id or None))
        answer = parse_json_object(text)
        if answer is not None and isinstance(answer.get("acceptable"), bool):
            return _semantic_report(answer)
        feedback = {
            "error": "The previous answer was not a JSON object with a boolean 'acceptable' field.",
            "previous_answer": text[:2000],
        }
    log.warning("semantic validator gave no parseable verdict for %s; treating as pass", call.tool_name)
    return ValidationReport(PASS, (), "llm")


def _semantic_report(answer: dict[str, Any]) -> ValidationReport:
    if answer["acceptable"]:
        return ValidationReport(PASS, (), "llm")
    problems = answer.get("problems") or []
    violations = []
    for problem in problems if isinstance(problems, list) else []:
        if isinstance(problem, dict):
            violations.append(ArgViolation(str(problem.get("parameter", "")), "semantic", str(problem.get("message", ""))))
        else:
            violations.append(ArgViolation("", "semantic", str(problem)))
    if not violations:
        violations.append(ArgViolation("", "semantic", "argument values were judged semantically invalid"))
    return ValidationReport(SEMANTIC_ERROR, tuple(violations), "llm")


def validate(
    call: ToolCall,
    schema: ToolSchema,
    context: TaskContext,
    llm: LlmBackend | None,
    semantic: bool = True,
    prompts: PromptLibrary = DEFAULT_PROMPTS,
) -> ValidationReport:
    """Rules first; the LLM stage only runs on a syntactic pass."""
    report = validate_syntactic(call, schema)
    if not report.passed or not semantic or llm is None:
        return report
    return validate_semantic(call, schema, context, llm, prompts)
