"""A deterministic, rule-based stand-in for the helper model.

``RuleHelper`` answers every helper role by reading the JSON input block of
the rendered prompt. Wrapped in ``ScriptedBackend`` and recorded through a
``FixtureStore`` it produces replay fixtures without a live model.

Domain behaviour comes from ``Scenario`` objects: an initial state, a
checklist with predicates, and per-tool *effects* that compute a response
body and the resulting state changes.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable

from . import canonical
from .llm import LlmRequest
from .prompts import extract
from .schema import parse_schema, serialize_schema, ToolSchema, ParameterSpec

# effect(args, state) -> (body, narrative, changes); a change value of None deletes the key
Effect = Callable[[dict[str, Any], dict[str, str]], tuple[Any, str, dict[str, str | None]]]
Check = Callable[[dict[str, str], list[dict[str, Any]]], bool]


@dataclass
class Scenario:
    task: str
    initial_state: dict[str, str] = field(default_factory=dict)
    checklist: list[tuple[str, str, Check]] = field(default_factory=list)
    effects: dict[str, Effect] = field(default_factory=dict)


CITIES = {"seattle", "paris", "london", "tokyo", "berlin", "new york", "san francisco", "sydney", "toronto", "beijing"}

_DATE_FORMATS = {
    "yyyy/mm/dd": r"^\d{4}/\d{2}/\d{2}$",
    "yyyy-mm-dd": r"^\d{4}-\d{2}-\d{2}$",
    "mm/dd/yy": r"^\d{2}/\d{2}/\d{2}$",
    "mm/dd/yyyy": r"^\d{2}/\d{2}/\d{4}$",
    "dd/mm/yyyy": r"^\d{2}/\d{2}/\d{4}$",
}
_NON_NEGATIVE = re.compile(r"\b(age|quantity|count|price|amount|number of)\b", re.IGNORECASE)


def semantic_problems(name: str, description: str, value: Any, context: str) -> list[str]:
    """Common-sense checks: city-for-country, date format, impossible negatives."""
    problems = []
    text = f"{name} {description}".lower()
    if "country" in text and isinstance(value, str) and value.strip().lower() in CITIES:
        problems.append(f"'{value}' is a city, but '{name}' expects a country")
    if isinstance(value, str):
        for fmt, regex in _DATE_FORMATS.items():
            if fmt in text or (("date" in text) and fmt in context.lower()):
                if not re.match(regex, value):
                    problems.append(f"'{value}' does not follow the {fmt} date format expected for '{name}'")
                break
    if isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0 and _NON_NEGATIVE.search(text):
        problems.append(f"'{name}' cannot be negative, got {value}")
    return problems


def _candidate_strings(spec: ParameterSpec, seed: str) -> list[str]:
    return [f"{spec.name}-{seed[:6]}", spec.name, "example", "a", "x1", "2024/01/01", "report.pdf", "ok"]


def synthesize(spec: ParameterSpec | None, seed: str = "") -> Any:
    """Deterministic value satisfying a spec's type and constraints."""
    if spec is None:
        return {}
    c = spec.constraints
    if c is not None and c.enum_values:
        return c.enum_values[int(canonical.digest(seed + spec.name)[:4], 16) % len(c.enum_values)]
    if spec.type in ("integer", "number"):
        lo = c.minimum if c and c.minimum is not None else 0
        hi = c.maximum if c and c.maximum is not None else lo + 100
        span = int(hi - lo)
        pick = lo + (int(canonical.digest(seed + spec.name)[:6], 16) % (span + 1) if span >= 0 else 0)
        if spec.type == "integer":
            import math

            return int(min(max(math.ceil(pick), math.ceil(lo)), math.floor(hi)))
        return float(pick)
    if spec.type == "string":
        for cand in _candidate_strings(spec, canonical.digest(seed + spec.name)):
            if c is not None:
                if c.pattern and not re.search(c.pattern, cand):
                    continue
                if c.min_length is not None and len(cand) < c.min_length:
                    cand = cand + "x" * (c.min_length - len(cand))
                if c.max_length is not None and len(cand) > c.max_length:
                    cand = cand[: c.max_length]
                if c.pattern and not re.search(c.pattern, cand):
                    continue
            return cand
        return ""
    if spec.type == "boolean":
        return int(canonical.digest(seed + spec.name)[:2], 16) % 2 == 0
    if spec.type == "array":
        return [synthesize(spec.items, seed + "0")] if spec.items is not None else []
    if spec.type == "object":
        return {p.name: synthesize(p, seed) for p in spec.properties}
    return None


def _break(body: Any, spec: ParameterSpec) -> Any:
    """A deliberately nonconforming variant of a conforming body."""
    if spec.type == "object" and isinstance(body, dict):
        required = [p.name for p in spec.properties if p.required]
        if required:
            return {k: v for k, v in body.items() if k != required[0]}
        return {**body, "unexpected_field": True}
    return {"unexpected": body}


def python_signature_to_openapi(source: str) -> dict[str, Any] | None:
    """Convert the first ``def`` in a snippet into a tool document."""
    try:
        module = ast.parse(source)
    except SyntaxError:
        return None
    func = next((n for n in module.body if isinstance(n, ast.FunctionDef)), None)
    if func is None:
        return None
    type_map = {"int": "integer", "float": "number", "str": "string", "bool": "boolean", "list": "array", "dict": "object"}
    args = func.args.args
    defaults = [None] * (len(args) - len(func.args.defaults)) + list(func.args.defaults)
    params = []
    doc = ast.get_docstring(func) or ""
    for arg, default in zip(args, defaults):
        ann = arg.annotation
        base = ann.id if isinstance(ann, ast.Name) else ann.value.id if isinstance(ann, ast.Subscript) and isinstance(ann.value, ast.Name) else "str"
        match = re.search(rf"^\s*{arg.arg}\s*[:\-]\s*(.+)$", doc, re.MULTILINE)
        params.append(ParameterSpec(arg.arg, type_map.get(base, "string"), default is None, description=match.group(1).strip() if match else ""))
    ret = func.returns
    rtype = type_map.get(ret.id, "object") if isinstance(ret, ast.Name) else "object"
    response = ParameterSpec("response", rtype) if ret is not None and rtype != "object" else ParameterSpec("response", "object")
    summary = doc.strip().splitlines()[0] if doc.strip() else func.name.replace("_", " ")
    return serialize_schema(ToolSchema(func.name, summary, tuple(params), response))


class RuleHelper:
    """Callable responder for ``ScriptedBackend``.

    ``flaky_tools``: responses for these tools are nonconforming on the first
    ask and correct once the prompt carries repair feedback.
    ``conversions``: definition text -> list of documents, one per round.
    """

    def __init__(
        self,
        scenarios: list[Scenario] = (),
        flaky_tools: set[str] = frozenset(),
        conversions: dict[str, list[Any]] | None = None,
        garbled_roles: set[str] = frozenset(),
    ):
        self.scenarios = {s.task: s for s in scenarios}
        self.effects: dict[str, Effect] = {}
        for s in scenarios:
            self.effects.update(s.effects)
        self.flaky_tools = set(flaky_tools)
        self.conversions = conversions or {}
        self.garbled_roles = set(garbled_roles)

    def add(self, scenario: Scenario) -> None:
        self.scenarios[scenario.task] = scenario
        self.effects.update(scenario.effects)

    def __call__(self, req: LlmRequest) -> str:
        payload, feedback = extract(req.prompt)
        if req.role in self.garbled_roles:
            return "I am not sure, let me think about it."
        handler = getattr(self, "_" + req.role)
        return handler(payload, feedback)

    def _semantic_validator(self, payload, feedback) -> str:
        call = payload["tool_call"]
        schema = parse_schema(payload["schema"])
        context = f"{payload['context'].get('task', '')}\n{payload['context'].get('task_state', '')}"
        problems = []
        for name, value in call["arguments"].items():
            spec = schema.parameter(name)
            for message in semantic_problems(name, spec.description if spec else "", value, context):
                problems.append({"parameter": name, "message": message})
        return json.dumps({"acceptable": not problems, "problems": problems})

    def _effect(self, call: dict[str, Any], state: dict[str, str]):
        effect = self.effects.get(call["tool_name"])
        return effect(call["arguments"], state) if effect else None

    def _response_generator(self, payload, feedback) -> str:
        call = payload["tool_call"]
        schema = parse_schema(payload["schema"])
        outcome = self._effect(call, payload["task_state"])
        if outcome is not None:
            body, narrative, _ = outcome
        else:
            body = synthesize(schema.response_schema, canonical.dumps(call))
            narrative = f"{call['tool_name']} completed"
        if schema.response_schema is None:
            body = {}
        elif call["tool_name"] in self.flaky_tools and feedback is None:
            body = _break(body, schema.response_schema)
        return json.dumps({"body": body, "narrative": narrative}, sort_keys=True)

    def _state_bootstrapper(self, payload, feedback) -> str:
        scenario = self.scenarios.get(payload["task"])
        return json.dumps({"entries": dict(scenario.initial_state) if scenario else {}})

    def _state_updater(self, payload, feedback) -> str:
        state = dict(payload["previous_state"])
        outcome = self._effect(payload["tool_call"], state)
        if outcome is not None:
            for key, value in outcome[2].items():
                if value is None:
                    state.pop(key, None)
                else:
                    state[key] = value
        return json.dumps({"entries": state})

    def _checklist(self, payload, feedback) -> str:
        scenario = self.scenarios.get(payload["task"])
        if scenario is None or not scenario.checklist:
            return json.dumps({"items": [{"id": "c1", "objective": payload["task"]}]})
        return json.dumps({"items": [{"id": cid, "objective": text} for cid, text, _ in scenario.checklist]})

    def _judge(self, payload, feedback) -> str:
        scenario = self.scenarios.get(payload["task"])
        state, calls = payload["task_state"], payload["tool_calls"]
        checks = {cid: check for cid, _, check in scenario.checklist} if scenario else {}
        items = []
        for item in payload["checklist"]:
            check = checks.get(item["id"])
            ok = check(state, calls) if check else any("response" in c for c in calls)
            items.append({"id": item["id"], "satisfied": bool(ok), "reason": "verified in state" if ok else "not reflected in state"})
        missing = [i["id"] for i in items if not i["satisfied"]]
        rationale = "all objectives met" if not missing else f"unmet objectives: {', '.join(missing)}"
        return json.dumps({"items": items, "rationale": rationale})

    def _schema_converter(self, payload, feedback) -> str:
        definition = payload["definition"]
        rounds = self.conversions.get(definition)
        if rounds:
            index = 0 if feedback is None else min(1 + _repair_round(feedback), len(rounds) - 1)
            answer = rounds[index]
            return answer if isinstance(answer, str) else json.dumps(answer, sort_keys=True)
        doc = python_signature_to_openapi(definition)
        return json.dumps(doc, sort_keys=True) if doc else "no definition recognized"

    def _planner(self, payload, feedback) -> str:
        return json.dumps({"action": "final", "answer": ""})


def _repair_round(feedback: dict[str, Any]) -> int:
    return int(feedback.get("round", 0)) if isinstance(feedback, dict) else 0
