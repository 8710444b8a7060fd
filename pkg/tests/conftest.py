from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from toolsim.demo import demo_helper, demo_tools  # noqa: E402
from toolsim.llm import FixtureStore, ScriptedBackend  # noqa: E402
from toolsim.rulesim import RuleHelper  # noqa: E402
from toolsim.schema import ToolRegistry  # noqa: E402
from toolsim.sessions import SessionStore  # noqa: E402


def recorder(path: Path, helper: RuleHelper) -> FixtureStore:
    return FixtureStore(path, "record", upstream=ScriptedBackend(helper))


def replayer(path: Path) -> FixtureStore:
    return FixtureStore(path, "replay_strict")


@pytest.fixture
def registry() -> ToolRegistry:
    return ToolRegistry.from_schemas(demo_tools())


@pytest.fixture
def helper() -> RuleHelper:
    return demo_helper()


@pytest.fixture
def fixture_file(tmp_path) -> Path:
    return tmp_path / "fixtures.jsonl"


@pytest.fixture
def scripted(helper) -> ScriptedBackend:
    return ScriptedBackend(helper)


@pytest.fixture
def store(registry, scripted) -> SessionStore:
    return SessionStore({"default": registry}, scripted)
