"""Exception hierarchy. Every error carries a machine-readable ``code``."""

from __future__ import annotations

from typing import Any


class ToolSimError(Exception):
    code = "error"

    def __init__(self, code: str | None = None, message: str = "", details: Any = None):
        if code is not None:
            self.code = code
        self.message = message or self.code
        self.details = details
        super().__init__(f"{self.code}: {self.message}")

    def to_dict(self) -> dict[str, Any]:
        return {"error_code": self.code, "message": self.message, "details": self.details}


class SchemaError(ToolSimError):
    """Raised for unusable tool schemas.

    ``path`` is a JSON pointer to the offending node; ``violations`` holds the
    full list when the error came out of document validation.
    """

    def __init__(self, code: str, message: str = "", path: str = "", violations=None):
        super().__init__(code, message, details={"path": path})
        self.path = path
        self.violations = list(violations or [])


class ConvertError(ToolSimError):
    pass


class LlmError(ToolSimError):
    def __init__(self, code: str, message: str = "", retry_after: float | None = None):
        super().__init__(code, message, details={"retry_after": retry_after} if retry_after is not None else None)
        self.retry_after = retry_after


class GenError(ToolSimError):
    pass


class ConfigError(ToolSimError):
    code = "config_error"


class UnknownSession(ToolSimError):
    code = "unknown_session"


class UnknownSnapshot(ToolSimError):
    code = "unknown_snapshot"


class ForeignSnapshot(ToolSimError):
    code = "foreign_snapshot"


class UnknownTool(ToolSimError):
    code = "unknown_tool"


class EnvUnreachable(ToolSimError):
    code = "env_unreachable"


class AgentError(ToolSimError):
    code = "agent_error"


class BindError(ToolSimError):
    code = "bind_error"
