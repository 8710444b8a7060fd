"""Isolated sessions with call/state histories and prefix snapshots.

``SessionStore`` is the in-process environment: the HTTP gateway and the
local client both drive it. Each session has its own lock, so calls within a
session are strictly ordered while different sessions run in parallel.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

from . import canonical
from .errors import ConfigError, ForeignSnapshot, ToolSimError, UnknownSession, UnknownSnapshot
from .feedback import Checklist, TaskFeedback, generate_checklist, judge as run_judge, naive_gate
from .llm import LlmBackend
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptLibrary
from .responses import CallRecord, SimulatedResponse, generate_response
from .schema import ToolRegistry
from .state import TaskState, bootstrap_state, update_state
from .validation import TaskContext, ToolCall, ValidationReport, validate

log = logging.getLogger(__name__)

FEEDBACK_MODES = ("judge", "naive")
DEFAULT_TTL = 3600.0


@dataclass
class SessionConfig:
    manifest: str = "default"
    task: str = ""
    rules: str = ""
    semantic_validation: bool = True
    bootstrap_state: bool = True
    feedback_mode: str = "judge"
    max_retries: int = 3
    initial_state: dict[str, str] | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SessionConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(message=f"unknown session settings: {sorted(unknown)}")
        config = cls(**data)
        if config.feedback_mode not in FEEDBACK_MODES:
            raise ConfigError(message=f"feedback_mode must be one of {FEEDBACK_MODES}")
        if not isinstance(config.max_retries, int) or config.max_retries < 0:
            raise ConfigError(message="max_retries must be a non-negative integer")
        return config

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Snapshot:
    snapshot_id: str
    session_id: str
    call_log_length: int
    state_version: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class Session:
    session_id: str
    config: SessionConfig
    registry: ToolRegistry
    state_history: list[TaskState]
    call_log: list[CallRecord] = field(default_factory=list)
    checklist: Checklist | None = None
    created_at: float = 0.0
    last_used: float = 0.0
    turn_start: int = 0

    def __post_init__(self) -> None:
        self.lock = threading.RLock()
        # never-reused serial per log entry; lets restore detect a clobbered prefix
        self._serials: list[int] = []
        self._next_serial = 0
        self._snapshots: dict[str, tuple[Snapshot, tuple[int, ...]]] = {}

    @property
    def state(self) -> TaskState:
        return self.state_history[-1]

    def histories(self) -> dict[str, Any]:
        return {
            "call_log": [r.to_dict() for r in self.call_log],
            "state_history": [s.to_dict() for s in self.state_history],
        }

    def histories_json(self) -> str:
        return canonical.dumps(self.histories())

    def summary(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "config": self.config.to_dict(),
            "call_count": len(self.call_log),
            "state_version": self.state.version,
            "created_at": self.created_at,
        }


class SessionStore:
    def __init__(
        self,
        registries: dict[str, ToolRegistry] | ToolRegistry,
        llm: LlmBackend,
        prompts: PromptLibrary = DEFAULT_PROMPTS,
        ttl: float = DEFAULT_TTL,
        clock: Callable[[], float] = time.time,
        id_factory: Callable[[], str] = lambda: uuid.uuid4().hex,
    ):
        if isinstance(registries, ToolRegistry):
            registries = {"default": registries}
        self.registries = registries
        self.llm = llm
        self.prompts = prompts
        self.ttl = ttl
        self.clock = clock
        self.id_factory = id_factory
        self._sessions: dict[str, Session] = {}
        self._snapshot_owner: dict[str, str] = {}
        self._lock = threading.Lock()

    # -- lifecycle -------------------------------------------------------

    def create_session(self, config: SessionConfig | dict[str, Any] | None = None) -> Session:
        if config is None:
            config = SessionConfig()
        elif isinstance(config, dict):
            config = SessionConfig.from_dict(config)
        registry = self.registries.get(config.manifest)
        if registry is None:
            raise ConfigError(message=f"unknown manifest '{config.manifest}'")
        session_id = self.id_factory()
        if config.initial_state is not None:
            initial = TaskState.of(config.initial_state)
        elif config.bootstrap_state and config.task.strip():
            initial = bootstrap_state(config.task, registry, self.llm, self.prompts, session_id=session_id)
        else:
            initial = TaskState()
        now = self.clock()
        session = Session(session_id, config, registry, [initial], created_at=now, last_used=now)
        with self._lock:
            if session_id in self._sessions:
                raise ToolSimError("duplicate_session", "session id collision")
            self._sessions[session_id] = session
        return session

    def get(self, session_id: str) -> Session:
        now = self.clock()
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None and now - session.last_used > self.ttl:
                self._drop(session_id)
                session = None
            if session is None:
                raise UnknownSession(message=f"no session '{session_id}'")
            session.last_used = now
            return session

    def delete_session(self, session_id: str) -> None:
        with self._lock:
            if session_id not in self._sessions:
                raise UnknownSession(message=f"no session '{session_id}'")
            self._drop(session_id)

    def _drop(self, session_id: str) -> None:
        session = self._sessions.pop(session_id)
        for snap_id in session._snapshots:
            self._snapshot_owner.pop(snap_id, None)

    def evict_expired(self) -> list[str]:
        now = self.clock()
        with self._lock:
            expired = [sid for sid, s in self._sessions.items() if now - s.last_used > self.ttl]
            for sid in expired:
                self._drop(sid)
        return expired

    def __len__(self) -> int:
        return len(self._sessions)

    # -- snapshots -------------------------------------------------------

    def snapshot(self, session_id: str) -> Snapshot:
        session = self.get(session_id)
        with session.lock:
            snap = Snapshot(self.id_factory(), session_id, len(session.call_log), session.state.version)
            session._snapshots[snap.snapshot_id] = (snap, tuple(session._serials))
            session.turn_start = snap.call_log_length
        with self._lock:
            self._snapshot_owner[snap.snapshot_id] = session_id
        return snap

    def restore(self, session_id: str, snapshot_id: str) -> Session:
        session = self.get(session_id)
        with session.lock:
            held = session._snapshots.get(snapshot_id)
            if held is None:
                with self._lock:
                    owner = self._snapshot_owner.get(snapshot_id)
                if owner is not None:
                    raise ForeignSnapshot(message=f"snapshot {snapshot_id} belongs to another session")
                raise UnknownSnapshot(message=f"no snapshot '{snapshot_id}'")
            snap, serials = held
            n = snap.call_log_length
            if tuple(session._serials[:n]) != serials or not any(s.version == snap.state_version for s in session.state_history):
                raise UnknownSnapshot("stale_snapshot", f"snapshot {snapshot_id} was invalidated by an earlier restore")
            del session.call_log[n:]
            del session._serials[n:]
            session.state_history = [s for s in session.state_history if s.version <= snap.state_version]
            session.turn_start = n
        return session

    # -- execution -------------------------------------------------------

    def execute_call(
        self,
        session_id: str,
        tool_name: str,
        arguments: dict[str, Any],
        call_id: str | None = None,
    ) -> tuple[ValidationReport, SimulatedResponse | None]:
        """validate -> generate -> update state; the log grows by exactly one entry.

        Rejected calls are logged but leave the task state untouched. If
        generation or the state update raises, nothing is recorded.
        """
        session = self.get(session_id)
        schema = session.registry.lookup(tool_name)
        with session.lock:
            if call_id is None:
                call_id = f"call-{len(session.call_log)}"
            elif any(r.call.call_id == call_id for r in session.call_log):
                raise ToolSimError("duplicate_call_id", f"call id '{call_id}' already used in this session")
            call = ToolCall(tool_name, arguments, call_id, session_id)
            state = session.state
            context = TaskContext(session.config.task, state.text())
            report = validate(call, schema, context, self.llm, session.config.semantic_validation, self.prompts)
            response = None
            new_state = None
            if report.passed:
                response = generate_response(call, schema, state, self.llm, self.prompts)
                new_state = update_state(state, call, response, self.llm, self.prompts)
            session.call_log.append(CallRecord(call, report, response))
            session._serials.append(session._next_serial)
            session._next_serial += 1
            if new_state is not None:
                session.state_history.append(new_state)
        return report, response

    def inject_state(self, session_id: str, entries: dict[str, Any]) -> TaskState:
        """Replace the current state wholesale (e.g. with ground truth from real tools)."""
        session = self.get(session_id)
        with session.lock:
            state = TaskState.of(entries, session.state.version + 1, None)
            session.state_history.append(state)
        return state

    def judge(
        self,
        session_id: str,
        final_answer: str = "",
        history: list[Any] | None = None,
        external_calls: list[dict[str, Any]] | None = None,
    ) -> TaskFeedback:
        session = self.get(session_id)
        with session.lock:
            task = session.config.task
            if not task.strip():
                raise ConfigError(message="session has no task to judge against")
            if session.checklist is None:
                session.checklist = generate_checklist(task, history, session.config.rules, self.llm, self.prompts, session_id)
            calls: list[Any] = list(session.call_log) + list(external_calls or [])
            if session.config.feedback_mode == "naive":
                return naive_gate(session.checklist, calls[session.turn_start :])
            return run_judge(
                session.checklist,
                session.state,
                calls,
                task,
                history,
                list(session.registry),
                self.llm,
                final_answer,
                self.prompts,
                session_id,
            )

    def usage(self, session_id: str) -> dict[str, Any]:
        self.get(session_id)
        return self.llm.usage(session_id)

    def dump(self, path: str | Path) -> None:
        with self._lock:
            sessions = list(self._sessions.values())
        data = {}
        for s in sessions:
            with s.lock:
                data[s.session_id] = {
                    **s.summary(),
                    **s.histories(),
                    "checklist": s.checklist.to_dict() if s.checklist else None,
                }
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
