"""Feedback-driven refinement of tool-call sequences.

One *attempt* lets the planning agent emit tool calls against the simulated
environment, then asks the judge for task feedback. A failed attempt is
retried from the snapshot taken at the start of the turn, with every earlier
attempt's calls and feedback handed back to the agent. ``max_retries`` counts
refinement rounds after the first attempt, so a budget of 3 means up to 4
attempts.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol

import httpx

from .errors import AgentError, EnvUnreachable, LlmError, ToolSimError
from .feedback import TaskFeedback
from .llm import LlmBackend, LlmRequest, parse_json_object
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptLibrary
from .schema import ToolRegistry
from .sessions import SessionStore
from .validation import ToolCall

log = logging.getLogger(__name__)

MODES = ("full_sim", "hybrid")
SIMULATE, PASSTHROUGH = "simulate", "passthrough"


# -- environment clients ---------------------------------------------------


class Environment(Protocol):
    def create_session(self, config: dict[str, Any]) -> str: ...
    def delete_session(self, session_id: str) -> None: ...
    def snapshot(self, session_id: str) -> dict[str, Any]: ...
    def restore(self, session_id: str, snapshot_id: str) -> None: ...
    def call_tool(self, session_id: str, tool_name: str, arguments: dict[str, Any]) -> dict[str, Any]: ...
    def state(self, session_id: str) -> dict[str, Any]: ...
    def judge(self, session_id: str, final_answer: str, external_calls: list[dict[str, Any]]) -> TaskFeedback: ...
    def usage(self, session_id: str) -> dict[str, Any]: ...


class LocalEnvironment:
    """Drives a ``SessionStore`` in-process."""

    def __init__(self, store: SessionStore):
        self.store = store

    def create_session(self, config: dict[str, Any]) -> str:
        return self.store.create_session(config).session_id

    def delete_session(self, session_id: str) -> None:
        self.store.delete_session(session_id)

    def snapshot(self, session_id: str) -> dict[str, Any]:
        return self.store.snapshot(session_id).to_dict()

    def restore(self, session_id: str, snapshot_id: str) -> None:
        self.store.restore(session_id, snapshot_id)

    def call_tool(self, session_id: str, tool_name: str, arguments: dict[str, Any]) -> dict[str, Any]:
        report, response = self.store.execute_call(session_id, tool_name, arguments)
        return {
            "ok": report.passed,
            "report": report.to_dict(),
            "response": response.to_dict() if response is not None else None,
        }

    def state(self, session_id: str) -> dict[str, Any]:
        return self.store.get(session_id).state.to_dict()

    def judge(self, session_id: str, final_answer: str, external_calls: list[dict[str, Any]]) -> TaskFeedback:
        return self.store.judge(session_id, final_answer, None, external_calls)

    def usage(self, session_id: str) -> dict[str, Any]:
        return self.store.usage(session_id)


class HttpEnvironment:
    """Client for the REST gateway. Accepts any ``httpx.Client`` (including a test client)."""

    def __init__(self, base_url: str | None = None, client: httpx.Client | None = None, timeout: float = 120.0):
        if client is None:
            if base_url is None:
                raise ValueError("need base_url or client")
            client = httpx.Client(base_url=base_url, timeout=timeout)
        self.client = client

    def _request(self, method: str, url: str, **kwargs) -> httpx.Response:
        try:
            return self.client.request(method, url, **kwargs)
        except httpx.TransportError as exc:
            raise EnvUnreachable(message=f"environment unreachable: {exc}") from exc

    def _ok(self, resp: httpx.Response) -> Any:
        if resp.status_code >= 400:
            try:
                err = resp.json()
            except ValueError:
                err = {"error_code": "http_error", "message": resp.text}
            raise ToolSimError(err.get("error_code", "http_error"), err.get("message", ""), err.get("details"))
        return resp.json() if resp.content else None

    def create_session(self, config: dict[str, Any]) -> str:
        return self._ok(self._request("POST", "/sessions", json=config))["session_id"]

    def delete_session(self, session_id: str) -> None:
        self._ok(self._request("DELETE", f"/sessions/{session_id}"))

    def snapshot(self, session_id: str) -> dict[str, Any]:
        return self._ok(self._request("POST", f"/sessions/{session_id}/snapshots"))

    def restore(self, session_id: str, snapshot_id: str) -> None:
        self._ok(self._request("POST", f"/sessions/{session_id}/snapshots/{snapshot_id}/restore"))

    def call_tool(self, session_id: str, tool_name: str, arguments: dict[str, Any]) -> dict[str, Any]:
        resp = self._request("POST", f"/sessions/{session_id}/tools/{tool_name}", json=arguments)
        if resp.status_code == 422:
            return {"ok": False, "report": resp.json()["details"], "response": None}
        return {"ok": True, "report": {"verdict": "pass", "stage": "", "violations": []}, "response": self._ok(resp)}

    def state(self, session_id: str) -> dict[str, Any]:
        return self._ok(self._request("GET", f"/sessions/{session_id}/state"))["current"]

    def judge(self, session_id: str, final_answer: str, external_calls: list[dict[str, Any]]) -> TaskFeedback:
        body = {"final_answer": final_answer, "external_calls": external_calls}
        return TaskFeedback.from_dict(self._ok(self._request("POST", f"/sessions/{session_id}/judge", json=body)))

    def usage(self, session_id: str) -> dict[str, Any]:
        return self._ok(self._request("GET", f"/sessions/{session_id}/usage"))


class HttpPassthrough:
    """Forwards read-only calls to real tool endpoints: ``POST {base}/{tool_name}``."""

    def __init__(self, base_url: str, client: httpx.Client | None = None, overrides: dict[str, str] | None = None):
        self.base_url = base_url.rstrip("/")
        self.overrides = overrides or {}
        self.client = client or httpx.Client(timeout=60.0)

    def __call__(self, tool_name: str, arguments: dict[str, Any]) -> dict[str, Any]:
        url = self.overrides.get(tool_name, f"{self.base_url}/{tool_name}")
        try:
            resp = self.client.post(url, json=arguments)
        except httpx.TransportError as exc:
            raise EnvUnreachable(message=f"real tool {tool_name} unreachable: {exc}") from exc
        try:
            body = resp.json()
        except ValueError:
            body = resp.text
        return {"status_code": resp.status_code, "body": body}


# -- planning agents -------------------------------------------------------


@dataclass(frozen=True)
class Action:
    kind: str  # "call" or "final"
    tool_name: str = ""
    arguments: dict[str, Any] = field(default_factory=dict)
    answer: str = ""

    @classmethod
    def call(cls, tool_name: str, arguments: dict[str, Any]) -> Action:
        return cls("call", tool_name, dict(arguments))

    @classmethod
    def final(cls, answer: str = "") -> Action:
        return cls("final", answer=answer)


class PlanningAgent(Protocol):
    def act(self, task: str, history: list[dict[str, Any]], prior: list[dict[str, Any]]) -> Action:
        """Next step given this attempt's history and earlier attempts' (calls, feedback)."""
        ...


class ScriptedAgent:
    """Plays a fixed call list per attempt; attempt k uses plan ``min(k, last)``.

    With one plan per fault depth this is a deterministic fix-per-feedback
    policy: each retry replays the next, less faulty, sequence.
    """

    def __init__(self, attempts: list[list[dict[str, Any]]], final_answer: str = ""):
        if not attempts:
            raise ValueError("scripted agent needs at least one attempt plan")
        self.attempts = attempts
        self.final_answer = final_answer
        self.tokens_used = 0

    @classmethod
    def from_spec(cls, spec: dict[str, Any]) -> ScriptedAgent:
        return cls(spec["attempts"], spec.get("final_answer", ""))

    def act(self, task: str, history: list[dict[str, Any]], prior: list[dict[str, Any]]) -> Action:
        plan = self.attempts[min(len(prior), len(self.attempts) - 1)]
        if len(history) < len(plan):
            step = plan[len(history)]
            return Action.call(step["tool_name"], step.get("arguments", {}))
        return Action.final(self.final_answer)


class LlmPlanner:
    """Planning agent backed by a model bound to the ``planner`` role."""

    def __init__(self, llm: LlmBackend, registry: ToolRegistry, prompts: PromptLibrary = DEFAULT_PROMPTS):
        self.llm = llm
        self.tools = [s.to_document() for s in sorted(registry, key=lambda s: s.tool_name)]
        self.prompts = prompts
        self.tokens_used = 0

    def act(self, task: str, history: list[dict[str, Any]], prior: list[dict[str, Any]]) -> Action:
        payload = {"task": task, "tools": self.tools, "this_attempt": history, "earlier_attempts": prior}
        feedback = None
        for _ in range(2):
            prompt = self.prompts.render("planner", payload, feedback)
            before = self.llm.usage(None)
            text = self.llm.complete(LlmRequest("planner", prompt))
            after = self.llm.usage(None)
            self.tokens_used += (after["prompt_tokens"] + after["completion_tokens"]) - (before["prompt_tokens"] + before["completion_tokens"])
            answer = parse_json_object(text) or {}
            if answer.get("action") == "final":
                return Action.final(str(answer.get("answer", "")))
            if answer.get("action") == "call" and isinstance(answer.get("tool_name"), str) and isinstance(answer.get("arguments", {}), dict):
                return Action.call(answer["tool_name"], answer.get("arguments", {}))
            feedback = {"error": "Answer with a JSON object whose 'action' is 'call' or 'final'.", "previous_answer": text[:2000]}
        raise AgentError(message="planner produced no usable action")


# -- routing ---------------------------------------------------------------


def route_tool(call: ToolCall | str, registry: ToolRegistry, mode: str) -> str:
    """Hybrid mode passes read-only tools through to real endpoints; all else is simulated."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    schema = registry.lookup(call if isinstance(call, str) else call.tool_name)
    if mode == "hybrid" and schema.access_class == "read_only":
        return PASSTHROUGH
    return SIMULATE


# -- runs ------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Prices in currency units per 1,000 tokens, per model, with a role-to-model map."""

    prices: dict[str, tuple[float, float]] = field(default_factory=lambda: {"default": (0.0025, 0.01)})
    role_models: dict[str, str] = field(default_factory=dict)

    def cost(self, usage: dict[str, Any]) -> float:
        total = 0.0
        for role, (prompt_tokens, completion_tokens) in usage.get("tokens_per_role", {}).items():
            model = self.role_models.get(role, "default")
            p_in, p_out = self.prices.get(model, self.prices["default"])
            total += prompt_tokens / 1000 * p_in + completion_tokens / 1000 * p_out
        return total


def _tokens(usage: dict[str, Any]) -> int:
    return int(usage.get("prompt_tokens", 0)) + int(usage.get("completion_tokens", 0))


def _usage_delta(after: dict[str, Any], before: dict[str, Any]) -> dict[str, Any]:
    return {
        "prompt_tokens": after["prompt_tokens"] - before["prompt_tokens"],
        "completion_tokens": after["completion_tokens"] - before["completion_tokens"],
        "tokens_per_role": {
            role: [a - b for a, b in zip(after["tokens_per_role"][role], before["tokens_per_role"].get(role, (0, 0)))]
            for role in after.get("tokens_per_role", {})
        },
    }


@dataclass
class AttemptRecord:
    attempt_index: int
    calls: list[dict[str, Any]]
    feedback: TaskFeedback
    tokens_used: int = 0
    final_answer: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "attempt_index": self.attempt_index,
            "calls": self.calls,
            "feedback": self.feedback.to_dict(),
            "tokens_used": self.tokens_used,
            "final_answer": self.final_answer,
        }


@dataclass
class RunResult:
    final_calls: list[dict[str, Any]]
    attempts: list[AttemptRecord]
    outcome: str
    wall_time: float = 0.0
    cost_estimate: float = 0.0
    final_state: dict[str, Any] = field(default_factory=dict)
    restores: int = 0

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def to_dict(self, timing: bool = True) -> dict[str, Any]:
        out = {
            "outcome": self.outcome,
            "final_calls": self.final_calls,
            "final_state": self.final_state,
            "attempts": [a.to_dict() for a in self.attempts],
            "restores": self.restores,
            "cost_estimate": round(self.cost_estimate, 10),
        }
        if timing:
            out["wall_time"] = self.wall_time
        return out


def run_task(
    task: str,
    agent: PlanningAgent,
    env: Environment,
    max_retries: int,
    *,
    registry: ToolRegistry | None = None,
    mode: str = "full_sim",
    passthrough: Callable[[str, dict[str, Any]], dict[str, Any]] | None = None,
    session_config: dict[str, Any] | None = None,
    max_steps: int = 50,
    cost_model: CostModel | None = None,
    clock: Callable[[], float] = time.perf_counter,
    keep_session: bool = False,
) -> RunResult:
    if max_retries < 0:
        raise ValueError("max_retries must be >= 0")
    if mode == "hybrid" and (registry is None or passthrough is None):
        raise ValueError("hybrid mode needs a registry and a passthrough transport")
    cost_model = cost_model or CostModel()
    started = clock()
    session_id = env.create_session({**(session_config or {}), "task": task})
    try:
        snap = env.snapshot(session_id)
        snap_state = env.state(session_id)
        prior: list[dict[str, Any]] = []
        attempts: list[AttemptRecord] = []
        restores = 0
        outcome = "budget_exhausted"
        agent_tokens_start = getattr(agent, "tokens_used", 0)
        for attempt in range(max_retries + 1):
            if attempt > 0:
                env.restore(session_id, snap["snapshot_id"])
                restores += 1
                if env.state(session_id) != snap_state:
                    raise ToolSimError("restore_mismatch", "state after restore differs from the turn snapshot")
            usage_before = env.usage(session_id)
            agent_before = getattr(agent, "tokens_used", 0)
            calls, external, answer = _one_attempt(task, agent, env, session_id, prior, registry, mode, passthrough, max_steps)
            feedback = env.judge(session_id, answer, external)
            usage_after = env.usage(session_id)
            tokens = _tokens(usage_after) - _tokens(usage_before) + getattr(agent, "tokens_used", 0) - agent_before
            attempts.append(AttemptRecord(attempt, calls, feedback, tokens, answer))
            if feedback.success:
                outcome = "success"
                break
            prior.append({"calls": calls, "feedback": feedback.to_dict()})
        final_state = env.state(session_id)
        usage = env.usage(session_id)
    finally:
        if not keep_session:
            try:
                env.delete_session(session_id)
            except ToolSimError:
                pass
    final_calls = [{"tool_name": c["tool_name"], "arguments": c["arguments"]} for c in attempts[-1].calls]
    cost = cost_model.cost(usage)
    agent_tokens = getattr(agent, "tokens_used", 0) - agent_tokens_start
    if agent_tokens:
        p_in, p_out = cost_model.prices.get(cost_model.role_models.get("planner", "default"), cost_model.prices["default"])
        cost += agent_tokens / 1000 * (p_in + p_out) / 2
    return RunResult(final_calls, attempts, outcome, clock() - started, cost, final_state, restores)


def _one_attempt(task, agent, env, session_id, prior, registry, mode, passthrough, max_steps):
    history: list[dict[str, Any]] = []
    external: list[dict[str, Any]] = []
    for _ in range(max_steps):
        try:
            action = agent.act(task, list(history), list(prior))
        except (LlmError, AgentError) as exc:
            raise AgentError(message=f"planning agent failed: {exc}") from exc
        if action.kind == "final":
            return history, external, action.answer
        route = route_tool(action.tool_name, registry, mode) if registry is not None and action.tool_name in registry else SIMULATE
        entry: dict[str, Any] = {"tool_name": action.tool_name, "arguments": action.arguments}
        if route == PASSTHROUGH:
            real = passthrough(action.tool_name, action.arguments)
            entry.update(route=PASSTHROUGH, ok=real["status_code"] < 400, response={"body": real["body"]})
            external.append({"tool_name": action.tool_name, "arguments": action.arguments, "response": {"body": real["body"]}, "source": "real"})
        else:
            try:
                result = env.call_tool(session_id, action.tool_name, action.arguments)
            except ToolSimError as exc:
                if exc.code != "unknown_tool":
                    raise
                result = {"ok": False, "report": {"verdict": "syntactic_error", "stage": "rules", "violations": [
                    {"parameter": "", "rule": "unknown_tool", "message": exc.message}]}, "response": None}
            entry["route"] = SIMULATE
            entry["ok"] = result["ok"]
            if result["ok"]:
                entry["response"] = {"body": result["response"]["body"], "narrative": result["response"]["narrative"]}
            else:
                entry["errors"] = result["report"]["violations"]
        history.append(entry)
    log.warning("agent hit the %d-step limit without a final answer", max_steps)
    return history, external, ""


# -- task files and sweeps -------------------------------------------------


@dataclass
class TaskSpec:
    task_text: str
    tool_manifest: str = "default"
    oracle: dict[str, Any] | None = None
    scripted_agent: dict[str, Any] | None = None
    session: dict[str, Any] = field(default_factory=dict)
    name: str = ""

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TaskSpec:
        return cls(
            data["task_text"],
            data.get("tool_manifest", "default"),
            data.get("oracle"),
            data.get("scripted_agent"),
            dict(data.get("session") or {}),
            data.get("name", ""),
        )


def oracle_passes(spec: TaskSpec, result: RunResult) -> bool:
    """Check a run against the task's success oracle; no oracle means trust the judge.

    Supported oracle keys: ``expected_calls`` (exact final call sequence) and
    ``expected_state`` (entries that must appear in the final state).
    """
    oracle = spec.oracle
    if not oracle:
        return result.success
    ok = True
    if "expected_calls" in oracle:
        ok = ok and result.final_calls == oracle["expected_calls"]
    if "expected_state" in oracle:
        entries = dict(result.final_state.get("entries", []))
        ok = ok and all(entries.get(k) == v for k, v in oracle["expected_state"].items())
    return ok


def scaling_sweep(
    tasks: Iterable[TaskSpec],
    agent_factory: Callable[[TaskSpec], PlanningAgent],
    env: Environment,
    retries_list: Iterable[int],
    **run_kwargs,
) -> list[dict[str, Any]]:
    """One row per retry budget: accuracy against the oracles, mean latency and cost."""
    tasks = list(tasks)
    rows = []
    for retries in retries_list:
        passed, latency, cost = 0, 0.0, 0.0
        for spec in tasks:
            config = {"manifest": spec.tool_manifest, **spec.session}
            result = run_task(spec.task_text, agent_factory(spec), env, retries, session_config=config, **run_kwargs)
            passed += oracle_passes(spec, result)
            latency += result.wall_time
            cost += result.cost_estimate
        n = max(len(tasks), 1)
        rows.append({"retries": retries, "accuracy": passed / n, "mean_latency": latency / n, "mean_cost": cost / n})
    return rows
