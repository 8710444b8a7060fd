"""Helper-LLM backends.

Every model call in the environment goes through ``LlmBackend.complete``.
Three implementations ship:

* ``LiveBackend`` posts chat-completion requests over HTTP, with a model
  binding per role.
* ``ScriptedBackend`` answers from a Python callable; used to author fixtures
  and in tests.
* ``FixtureStore`` records completions keyed by prompt content and replays
  them, which makes the whole system deterministic.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import httpx

from . import canonical
from .errors import LlmError

log = logging.getLogger(__name__)

ROLES = (
    "semantic_validator",
    "response_generator",
    "state_bootstrapper",
    "state_updater",
    "checklist",
    "judge",
    "schema_converter",
    "planner",
)


@dataclass(frozen=True)
class LlmRequest:
    role: str
    prompt: str
    structured_output_required: bool = True
    # accounting only; never part of the fixture key
    session_id: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown LLM role {self.role!r}")

    @property
    def key(self) -> str:
        return canonical.digest({"role": self.role, "prompt": self.prompt})


def estimate_tokens(text: str) -> int:
    """Rough token count (4 characters per token); deterministic by design."""
    return max(1, math.ceil(len(text) / 4)) if text else 0


class UsageLedger:
    """Per-session token and call accounting. Thread-safe."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._prompt: dict[str, int] = defaultdict(int)
        self._completion: dict[str, int] = defaultdict(int)
        self._calls: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
        self._role_tokens: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(lambda: [0, 0]))

    def record(self, session_id: str | None, role: str, prompt_tokens: int, completion_tokens: int) -> None:
        sid = session_id or "_global"
        with self._lock:
            self._prompt[sid] += prompt_tokens
            self._completion[sid] += completion_tokens
            self._calls[sid][role] += 1
            tokens = self._role_tokens[sid][role]
            tokens[0] += prompt_tokens
            tokens[1] += completion_tokens

    def usage(self, session_id: str | None) -> dict[str, Any]:
        sid = session_id or "_global"
        with self._lock:
            calls = self._calls.get(sid, {})
            role_tokens = self._role_tokens.get(sid, {})
            per_role = {role: calls.get(role, 0) for role in ROLES}
            return {
                "prompt_tokens": self._prompt.get(sid, 0),
                "completion_tokens": self._completion.get(sid, 0),
                "calls_per_role": per_role,
                "tokens_per_role": {role: list(role_tokens.get(role, (0, 0))) for role in ROLES},
                "total_calls": sum(per_role.values()),
            }

    def forget(self, session_id: str) -> None:
        with self._lock:
            self._prompt.pop(session_id, None)
            self._completion.pop(session_id, None)
            self._calls.pop(session_id, None)
            self._role_tokens.pop(session_id, None)


class LlmBackend:
    """Base class: subclasses implement ``_complete``."""

    def __init__(self, ledger: UsageLedger | None = None) -> None:
        self.ledger = ledger or UsageLedger()
        self._count_lock = threading.Lock()
        self.calls = 0

    def complete(self, req: LlmRequest) -> str:
        text, prompt_tokens, completion_tokens = self._complete(req)
        with self._count_lock:
            self.calls += 1
        self.ledger.record(req.session_id, req.role, prompt_tokens, completion_tokens)
        return text

    def _complete(self, req: LlmRequest) -> tuple[str, int, int]:
        raise NotImplementedError

    def usage(self, session_id: str | None) -> dict[str, Any]:
        return self.ledger.usage(session_id)


class ScriptedBackend(LlmBackend):
    """Answers with ``responder(request)``; raises LlmError if it returns None."""

    def __init__(self, responder: Callable[[LlmRequest], str | None], ledger: UsageLedger | None = None):
        super().__init__(ledger)
        self.responder = responder

    def _complete(self, req: LlmRequest) -> tuple[str, int, int]:
        text = self.responder(req)
        if text is None:
            raise LlmError("unavailable", f"scripted responder has no answer for role {req.role}")
        return text, estimate_tokens(req.prompt), estimate_tokens(text)


@dataclass(frozen=True)
class RoleBinding:
    base_url: str
    model: str
    api_key: str | None = None
    temperature: float = 0.0


ENV_PREFIX = "TOOLSIM_LLM"


def bindings_from_env(environ: dict[str, str] | None = None) -> dict[str, RoleBinding]:
    """Resolve a binding per role from environment variables.

    ``TOOLSIM_LLM_BASE_URL``, ``TOOLSIM_LLM_MODEL`` and ``TOOLSIM_LLM_API_KEY``
    set the defaults; a ``_<ROLE>`` suffix (e.g. ``TOOLSIM_LLM_MODEL_JUDGE``)
    overrides one role.
    """
    env = os.environ if environ is None else environ
    out = {}
    for role in ROLES:
        suffix = "_" + role.upper()

        def get(name: str, default: str | None = None) -> str | None:
            return env.get(f"{ENV_PREFIX}_{name}{suffix}", env.get(f"{ENV_PREFIX}_{name}", default))

        model = get("MODEL")
        if not model:
            continue
        out[role] = RoleBinding(
            base_url=get("BASE_URL", "https://api.openai.com/v1") or "",
            model=model,
            api_key=get("API_KEY"),
            temperature=float(get("TEMPERATURE", "0") or 0),
        )
    return out


class LiveBackend(LlmBackend):
    """Chat-completions client with transient-failure retry."""

    def __init__(
        self,
        bindings: dict[str, RoleBinding],
        *,
        client: httpx.Client | None = None,
        max_attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        ledger: UsageLedger | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        super().__init__(ledger)
        self.bindings = bindings
        self.client = client or httpx.Client(timeout=timeout)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.sleep = sleep

    def _complete(self, req: LlmRequest) -> tuple[str, int, int]:
        binding = self.bindings.get(req.role)
        if binding is None:
            raise LlmError("unavailable", f"no model bound for role {req.role}")
        payload: dict[str, Any] = {
            "model": binding.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": binding.temperature,
        }
        if req.structured_output_required:
            payload["response_format"] = {"type": "json_object"}
        headers = {"Authorization": f"Bearer {binding.api_key}"} if binding.api_key else {}
        url = binding.base_url.rstrip("/") + "/chat/completions"

        last: LlmError | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.client.post(url, json=payload, headers=headers)
            except httpx.TransportError as exc:
                last = LlmError("unavailable", f"transport error: {exc}")
                continue
            if resp.status_code == 429:
                retry_after = _retry_after(resp)
                last = LlmError("rate_limited", "provider rate limit", retry_after=retry_after)
                continue
            if resp.status_code >= 500:
                last = LlmError("unavailable", f"provider returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise LlmError("unavailable", f"provider rejected request: {resp.status_code} {resp.text[:200]}")
            try:
                data = resp.json()
                text = data["choices"][0]["message"]["content"] or ""
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise LlmError("unavailable", f"malformed provider response: {exc}") from exc
            usage = data.get("usage") or {}
            return (
                text,
                int(usage.get("prompt_tokens", estimate_tokens(req.prompt))),
                int(usage.get("completion_tokens", estimate_tokens(text))),
            )
        assert last is not None
        raise last


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("retry-after")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


FIXTURE_MODES = ("record", "replay", "replay_strict")


class FixtureConflict(LlmError):
    def __init__(self, key: str):
        super().__init__("fixture_conflict", f"fixture {key[:12]} already recorded with different text")


class FixtureStore(LlmBackend):
    """Record/replay store keyed by a hash of (role, prompt).

    Fixture files hold one JSON object per line:
    ``{"key", "role", "prompt_digest", "completion"}``.

    ``record`` forwards to ``upstream`` and appends new entries; re-recording a
    key with different text raises ``FixtureConflict``. ``replay`` answers
    from the store and falls back to ``upstream`` on a miss; ``replay_strict``
    raises ``fixture_missing`` instead.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        mode: str = "replay_strict",
        upstream: LlmBackend | None = None,
        ledger: UsageLedger | None = None,
    ):
        super().__init__(ledger)
        if mode not in FIXTURE_MODES:
            raise ValueError(f"mode must be one of {FIXTURE_MODES}")
        self.mode = mode
        self.upstream = upstream
        self.path = Path(path) if path is not None else None
        self.entries: dict[str, dict[str, str]] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self.load(self.path)

    def load(self, path: str | Path) -> None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                self.entries[entry["key"]] = entry
            except (ValueError, KeyError) as exc:
                raise LlmError("fixture_corrupt", f"{path}:{lineno}: {exc}") from exc

    def add(self, req: LlmRequest, completion: str) -> None:
        entry = {
            "key": req.key,
            "role": req.role,
            "prompt_digest": canonical.digest(req.prompt),
            "completion": completion,
        }
        with self._lock:
            existing = self.entries.get(req.key)
            if existing is not None:
                if existing["completion"] != completion:
                    raise FixtureConflict(req.key)
                return
            self.entries[req.key] = entry
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a") as fh:
                    fh.write(canonical.dumps(entry) + "\n")

    def _complete(self, req: LlmRequest) -> tuple[str, int, int]:
        entry = self.entries.get(req.key)
        if entry is not None and self.mode != "record":
            text = entry["completion"]
            return text, estimate_tokens(req.prompt), estimate_tokens(text)
        if self.mode == "replay_strict":
            raise LlmError("fixture_missing", f"no fixture for role {req.role} key {req.key[:12]}")
        if self.upstream is None:
            if entry is not None:
                text = entry["completion"]
                return text, estimate_tokens(req.prompt), estimate_tokens(text)
            raise LlmError("fixture_missing" if self.mode == "replay" else "unavailable", "no upstream backend configured")
        text = self.upstream.complete(req)
        if self.mode == "record":
            self.add(req, text)
        return text, estimate_tokens(req.prompt), estimate_tokens(text)

    def write(self, path: str | Path) -> None:
        """Rewrite the store as a sorted fixture file."""
        lines = [canonical.dumps(self.entries[k]) for k in sorted(self.entries)]
        Path(path).write_text("".join(line + "\n" for line in lines))


_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$", re.MULTILINE)


def parse_json_object(text: str) -> dict[str, Any] | None:
    """Pull a JSON object out of model output; None if there is none."""
    text = (text or "").strip()
    if not text:
        return None
    candidates: Iterable[str] = (text, _FENCE.sub("", text).strip())
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
            if isinstance(obj, dict):
                return obj
        except ValueError:
            pass
    start, end = text.find("{"), text.rfind("}")
    if 0 <= start < end:
        try:
            obj = json.loads(text[start : end + 1])
            if isinstance(obj, dict):
                return obj
        except ValueError:
            return None
    return None
