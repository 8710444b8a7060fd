"""REST gateway over a ``SessionStore``.

Requests under ``/sessions/{id}`` pass through two middlewares before reaching
a handler: the session middleware resolves the session (404 if unknown), then
the route middleware maps ``/tools/{name}`` onto the session's tool schema
(404 if unregistered). Every error body uses the envelope
``{"error_code", "message", "details"}``.
"""

from __future__ import annotations

import json
import logging
import re
import socket
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response
from starlette.concurrency import run_in_threadpool
from starlette.exceptions import HTTPException as StarletteHTTPException
from starlette.middleware.base import BaseHTTPMiddleware

from . import __version__
from .errors import BindError, ConfigError, GenError, LlmError, ToolSimError, UnknownSession, UnknownTool
from .llm import FixtureStore, LiveBackend, LlmBackend, RoleBinding, bindings_from_env
from .prompts import PromptLibrary
from .schema import load_manifest
from .sessions import DEFAULT_TTL, SessionStore

log = logging.getLogger(__name__)

_SESSION_PATH = re.compile(r"^/sessions/([^/]+)(?:/.*)?$")
_TOOL_PATH = re.compile(r"^/sessions/[^/]+/tools/([^/]+)$")

_STATUS = {
    "unknown_session": 404,
    "unknown_tool": 404,
    "unknown_snapshot": 404,
    "stale_snapshot": 409,
    "foreign_snapshot": 409,
    "duplicate_call_id": 409,
    "config_error": 400,
    "rate_limited": 429,
    "nonconforming_after_retries": 502,
}


def envelope(status: int, code: str, message: str, details: Any = None) -> JSONResponse:
    return JSONResponse({"error_code": code, "message": message, "details": details}, status_code=status)


def error_response(exc: ToolSimError) -> JSONResponse:
    status = _STATUS.get(exc.code)
    if status is None:
        status = 503 if isinstance(exc, LlmError) else 502 if isinstance(exc, GenError) else 400
    return envelope(status, exc.code, exc.message, exc.details)


@dataclass(frozen=True)
class MiddlewareChain:
    stages: tuple[str, ...] = ("session_middleware", "route_middleware", "handler")


class SessionMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        trace = request.scope.setdefault("state", {}).setdefault("trace", [])
        trace.append("session_middleware")
        match = _SESSION_PATH.match(request.url.path)
        if match:
            store: SessionStore = request.app.state.store
            try:
                request.state.session = store.get(match.group(1))
            except UnknownSession as exc:
                return error_response(exc)
        response = await call_next(request)
        response.headers["x-middleware-trace"] = ",".join(trace)
        return response


class RouteMiddleware(BaseHTTPMiddleware):
    async def dispatch(self, request: Request, call_next):
        request.scope["state"]["trace"].append("route_middleware")
        match = _TOOL_PATH.match(request.url.path)
        if match:
            session = request.state.session
            try:
                request.state.tool_schema = session.registry.lookup(match.group(1))
            except UnknownTool as exc:
                return error_response(exc)
        return await call_next(request)


async def _json_body(request: Request, default: Any = None) -> Any:
    raw = await request.body()
    if not raw.strip():
        return default
    return json.loads(raw)


def create_app(store: SessionStore, dump_path: str | Path | None = None, session_defaults: dict[str, Any] | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        if dump_path is not None:
            store.dump(dump_path)
            log.info("dumped sessions to %s", dump_path)

    app = FastAPI(title="toolsim gateway", version=__version__, lifespan=lifespan)
    app.state.store = store
    app.state.chain = MiddlewareChain()
    defaults = dict(session_defaults or {})
    # add_middleware prepends: the last one added runs first
    app.add_middleware(RouteMiddleware)
    app.add_middleware(SessionMiddleware)

    @app.exception_handler(ToolSimError)
    async def _tool_sim_error(request: Request, exc: ToolSimError):
        return error_response(exc)

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(request: Request, exc: StarletteHTTPException):
        code = "not_found" if exc.status_code == 404 else "http_error"
        return envelope(exc.status_code, code, str(exc.detail))

    @app.exception_handler(json.JSONDecodeError)
    async def _bad_json(request: Request, exc: json.JSONDecodeError):
        return envelope(400, "malformed_json", f"request body is not valid JSON: {exc}")

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "version": __version__}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        body = await _json_body(request, {})
        if not isinstance(body, dict):
            raise ConfigError(message="session config must be a JSON object")
        session = await run_in_threadpool(store.create_session, {**defaults, **body})
        return session.summary()

    @app.get("/sessions/{session_id}")
    async def get_session(request: Request, session_id: str):
        return request.state.session.summary()

    @app.delete("/sessions/{session_id}", status_code=204)
    async def delete_session(session_id: str):
        store.delete_session(session_id)
        return Response(status_code=204)

    @app.post("/sessions/{session_id}/tools/{tool_name}")
    async def call_tool(request: Request, session_id: str, tool_name: str):
        try:
            arguments = await _json_body(request, {})
        except json.JSONDecodeError as exc:
            arguments = None
            problem = f"request body is not valid JSON: {exc}"
        else:
            problem = None if isinstance(arguments, dict) else "request body must be a JSON object of arguments"
        if problem is not None:
            report = {"verdict": "syntactic_error", "stage": "rules", "violations": [{"parameter": "", "rule": "malformed_body", "message": problem}]}
            return envelope(422, "validation_failed", problem, report)
        call_id = request.headers.get("x-call-id")
        report, response = await run_in_threadpool(store.execute_call, session_id, tool_name, arguments, call_id)
        if not report.passed:
            return envelope(422, "validation_failed", "; ".join(v.message for v in report.violations), report.to_dict())
        return response.to_dict()

    @app.get("/sessions/{session_id}/calls")
    async def get_calls(request: Request, session_id: str):
        session = request.state.session
        with session.lock:
            return [r.to_dict() for r in session.call_log]

    @app.get("/sessions/{session_id}/state")
    async def get_state(request: Request, session_id: str):
        session = request.state.session
        with session.lock:
            return {"current": session.state.to_dict(), "history": [s.to_dict() for s in session.state_history]}

    @app.post("/sessions/{session_id}/state")
    async def inject_state(request: Request, session_id: str):
        body = await _json_body(request, {})
        entries = body.get("entries") if isinstance(body, dict) else None
        if not isinstance(entries, dict):
            raise ConfigError(message="body must be {\"entries\": {key: value}}")
        return store.inject_state(session_id, entries).to_dict()

    @app.post("/sessions/{session_id}/snapshots", status_code=201)
    async def take_snapshot(session_id: str):
        return store.snapshot(session_id).to_dict()

    @app.post("/sessions/{session_id}/snapshots/{snapshot_id}/restore")
    async def restore_snapshot(session_id: str, snapshot_id: str):
        session = await run_in_threadpool(store.restore, session_id, snapshot_id)
        return {**session.summary(), "state": session.state.to_dict()}

    @app.post("/sessions/{session_id}/judge")
    async def judge(request: Request, session_id: str):
        body = await _json_body(request, {}) or {}
        if not isinstance(body, dict):
            raise ConfigError(message="judge body must be a JSON object")
        feedback = await run_in_threadpool(
            store.judge,
            session_id,
            body.get("final_answer", ""),
            body.get("history"),
            body.get("external_calls"),
        )
        return feedback.to_dict()

    @app.get("/sessions/{session_id}/usage")
    async def usage(session_id: str):
        return store.usage(session_id)

    return app


@dataclass
class GatewayConfig:
    """Gateway settings, normally read from a JSON file.

    ``llm.backend`` is ``live``, ``replay`` (strict), ``replay_lenient`` or
    ``record``; ``llm.roles`` maps roles to ``{"model", "base_url"}``. API
    keys come from the environment only.
    """

    manifests: dict[str, str] = field(default_factory=dict)
    host: str = "127.0.0.1"
    port: int = 8080
    llm: dict[str, Any] = field(default_factory=dict)
    semantic_validation: bool = True
    ttl: float = DEFAULT_TTL
    dump_path: str | None = None
    prompt_dir: str | None = None

    @classmethod
    def load(cls, path: str | Path) -> GatewayConfig:
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(message=f"cannot read config {path}: {exc}") from exc
        config = cls(**data)
        base = path.parent
        config.manifests = {name: str(base / p) for name, p in config.manifests.items()}
        for key in ("dump_path", "prompt_dir"):
            value = getattr(config, key)
            if value is not None:
                setattr(config, key, str(base / value))
        if config.llm.get("fixtures"):
            config.llm["fixtures"] = str(base / config.llm["fixtures"])
        return config


def build_backend(spec: dict[str, Any]) -> LlmBackend:
    """Build a backend from ``{"backend": ..., "fixtures": ..., "roles": ...}``."""
    kind = spec.get("backend", "live")
    bindings = bindings_from_env()
    for role, binding in (spec.get("roles") or {}).items():
        current = bindings.get(role)
        bindings[role] = RoleBinding(
            base_url=binding.get("base_url", current.base_url if current else "https://api.openai.com/v1"),
            model=binding["model"],
            api_key=current.api_key if current else None,
            temperature=float(binding.get("temperature", 0.0)),
        )
    if kind == "live":
        return LiveBackend(bindings)
    fixtures = spec.get("fixtures")
    if kind == "replay":
        return FixtureStore(fixtures, "replay_strict")
    if kind == "replay_lenient":
        return FixtureStore(fixtures, "replay", upstream=LiveBackend(bindings))
    if kind == "record":
        return FixtureStore(fixtures, "record", upstream=LiveBackend(bindings))
    raise ConfigError(message=f"unknown llm backend '{kind}'")


def build_store(config: GatewayConfig, llm: LlmBackend | None = None) -> SessionStore:
    if not config.manifests:
        raise ConfigError(message="config names no manifests")
    registries = {name: load_manifest(path) for name, path in config.manifests.items()}
    return SessionStore(registries, llm or build_backend(config.llm), PromptLibrary(config.prompt_dir), ttl=config.ttl)


def serve(config: GatewayConfig, llm: LlmBackend | None = None) -> None:
    """Run the gateway until interrupted (uvicorn handles SIGINT/SIGTERM)."""
    import uvicorn

    store = build_store(config, llm)
    app = create_app(store, config.dump_path, {"semantic_validation": config.semantic_validation})
    try:
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
            probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            probe.bind((config.host, config.port))
    except OSError as exc:
        raise BindError(message=f"cannot bind {config.host}:{config.port}: {exc}") from exc
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
