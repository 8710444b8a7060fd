"""A small, self-contained demo world: files, a shopping cart and weather.

``build_demo(out_dir)`` writes tool documents, a manifest, a task file with
scripted agents and a fixture file, so ``gats run`` works offline under
strict replay. Fixtures come from ``RuleHelper``; swap in recordings from a
real model with ``--backend record`` for live behaviour.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from . import canonical
from .gats import LocalEnvironment, ScriptedAgent, TaskSpec, run_task
from .llm import FixtureStore, ScriptedBackend
from .rulesim import RuleHelper, Scenario
from .schema import ConstraintSet, ParameterSpec, ToolRegistry, ToolSchema, write_manifest
from .sessions import SessionStore

FOLDER_NAME = r"^[A-Za-z0-9_-]+$"
FILE_NAME = r"^[A-Za-z0-9_-]+\.[A-Za-z0-9]+$"


def _obj(*props: ParameterSpec) -> ParameterSpec:
    return ParameterSpec("response", "object", properties=props)


def _p(name, type_, required=True, description="", **constraints) -> ParameterSpec:
    if "enum_values" in constraints:
        constraints["enum_values"] = tuple(constraints["enum_values"])
    return ParameterSpec(name, type_, required, ConstraintSet(**constraints) if constraints else None, description)


def demo_tools() -> list[ToolSchema]:
    return [
        ToolSchema(
            "create_folder",
            "Create a folder inside an existing directory.",
            (
                _p("folder_name", "string", description="Name of the new folder", pattern=FOLDER_NAME, min_length=1, max_length=64),
                _p("parent_directory", "string", description="Directory in which to create the folder", min_length=1),
            ),
            _obj(_p("success", "boolean"), _p("path", "string")),
        ),
        ToolSchema(
            "move_file",
            "Move a file into a folder.",
            (
                _p("source_file", "string", description="File name including its extension", pattern=FILE_NAME),
                _p("destination_folder", "string", description="Folder that receives the file", min_length=1),
            ),
            _obj(_p("success", "boolean"), _p("message", "string")),
        ),
        ToolSchema(
            "list_directory",
            "List the folders and files located in a directory.",
            (_p("directory", "string", description="Directory to list"),),
            _obj(ParameterSpec("entries", "array", True, items=ParameterSpec("entry", "string"))),
            access_class="read_only",
        ),
        ToolSchema(
            "add_to_cart",
            "Add units of an item to the shopping cart.",
            (
                _p("item", "string", description="Item name in singular form", min_length=1),
                _p("quantity", "integer", description="Number of units to add", minimum=1, maximum=99),
            ),
            _obj(_p("success", "boolean"), _p("message", "string")),
        ),
        ToolSchema(
            "remove_from_cart",
            "Remove units of an item from the shopping cart.",
            (
                _p("item", "string", description="Item name in singular form", min_length=1),
                _p("quantity", "integer", description="Number of units to remove", minimum=1, maximum=99),
            ),
            _obj(_p("success", "boolean"), _p("message", "string")),
        ),
        ToolSchema(
            "view_cart",
            "Show the cart contents.",
            (),
            _obj(_p("summary", "string")),
            access_class="read_only",
        ),
        ToolSchema(
            "get_weather",
            "Current weather for a city.",
            (
                _p("city", "string", description="City name", min_length=1),
                _p("unit", "string", required=False, description="Temperature unit", enum_values=("celsius", "fahrenheit")),
            ),
            _obj(_p("temperature", "number"), _p("conditions", "string")),
            access_class="read_only",
        ),
    ]


# -- effects: (args, state) -> (body, narrative, state changes) ----------------


def _create_folder(args, state):
    name, parent = args["folder_name"], args["parent_directory"]
    return {"success": True, "path": f"{parent}/{name}"}, f"created folder {name} in {parent}", {f"folder {name}": parent}


def _move_file(args, state):
    src, dest = args["source_file"], args["destination_folder"]
    return {"success": True, "message": f"moved {src} to {dest}"}, f"moved {src} into {dest}", {f"file {src}": dest}


def _list_directory(args, state):
    where = args["directory"]
    names = sorted(k.split(" ", 1)[1] for k, v in state.items() if k.split(" ", 1)[0] in ("folder", "file") and v == where)
    return {"entries": names}, f"{where} holds {len(names)} entries", {}


def _cart_key(item: str) -> str:
    return f"{item}s in cart"


def _count(state, item) -> int:
    try:
        return int(state.get(_cart_key(item), "0"))
    except ValueError:
        return 0


def _add_to_cart(args, state):
    item, qty = args["item"], args["quantity"]
    total = _count(state, item) + qty
    return {"success": True, "message": f"added {qty} {item}"}, f"successfully add {qty} {item}", {_cart_key(item): str(total)}


def _remove_from_cart(args, state):
    item, qty = args["item"], args["quantity"]
    total = max(0, _count(state, item) - qty)
    what = f"one {item}" if qty == 1 else f"{qty} {item}s"
    return {"success": True, "message": f"successfully remove {what}"}, f"successfully remove {what}", {_cart_key(item): str(total)}


def _view_cart(args, state):
    lines = [f"{k}: {v}" for k, v in sorted(state.items()) if k.endswith(" in cart")]
    return {"summary": "; ".join(lines) or "cart is empty"}, "listed the cart", {}


def _get_weather(args, state):
    seed = int(canonical.digest(args["city"].lower())[:4], 16)
    celsius = round(5 + seed % 25 + (seed % 10) / 10, 1)
    temp = celsius if args.get("unit", "celsius") == "celsius" else round(celsius * 9 / 5 + 32, 1)
    conditions = ("sunny", "cloudy", "rain", "windy")[seed % 4]
    return {"temperature": temp, "conditions": conditions}, f"{conditions} in {args['city']}", {}


EFFECTS = {
    "create_folder": _create_folder,
    "move_file": _move_file,
    "list_directory": _list_directory,
    "add_to_cart": _add_to_cart,
    "remove_from_cart": _remove_from_cart,
    "view_cart": _view_cart,
    "get_weather": _get_weather,
}


def _called(calls, tool, **args) -> bool:
    return any(
        c.get("tool_name") == tool and "response" in c and all(c["arguments"].get(k) == v for k, v in args.items())
        for c in calls
    )


def folder_scenario(task: str, folder: str, parent: str, file: str, origin: str = "downloads") -> Scenario:
    return Scenario(
        task,
        {f"file {file}": origin},
        [
            ("c1", f"The {folder} folder exists inside the {parent} directory", lambda s, c: s.get(f"folder {folder}") == parent),
            ("c2", f"{file} is located in the {folder} folder", lambda s, c: s.get(f"file {file}") == folder),
        ],
        EFFECTS,
    )


FOLDER_TASK = "Create a folder named temp in the document directory and move report.pdf into it."


def folder_plans(folder: str, parent: str, file: str, depth: int) -> list[list[dict[str, Any]]]:
    """``depth`` faulty attempts, each with a different mistake, then the fix."""
    correct = [
        {"tool_name": "create_folder", "arguments": {"folder_name": folder, "parent_directory": parent}},
        {"tool_name": "move_file", "arguments": {"source_file": file, "destination_folder": folder}},
    ]
    faults = [
        # file name without its extension fails the format check
        [correct[0], {"tool_name": "move_file", "arguments": {"source_file": file.rsplit(".", 1)[0], "destination_folder": folder}}],
        # valid calls, wrong parent directory
        [{"tool_name": "create_folder", "arguments": {"folder_name": folder, "parent_directory": "/"}}, correct[1]],
        # required parameter missing
        [{"tool_name": "create_folder", "arguments": {"folder_name": folder}}, correct[1]],
    ]
    return [faults[i % len(faults)] for i in range(depth)] + [correct]


def apples_scenario() -> Scenario:
    task = "Buy 3 apples, then return 1 of them."
    return Scenario(
        task,
        {"apples in cart": "0"},
        [
            ("c1", "3 apples are added to the cart", lambda s, c: _called(c, "add_to_cart", item="apple", quantity=3)),
            ("c2", "1 apple is removed and the cart holds 2 apples", lambda s, c: s.get("apples in cart") == "2"),
        ],
        EFFECTS,
    )


def weather_scenario() -> Scenario:
    task = "What is the weather in Seattle, in celsius?"
    return Scenario(
        task,
        {},
        [("c1", "Current weather for Seattle is retrieved", lambda s, c: _called(c, "get_weather", city="Seattle"))],
        EFFECTS,
    )


CORPUS_FOLDERS = ("archive", "notes", "photos", "invoices", "drafts", "music", "scans", "backup", "travel", "recipes", "taxes", "slides")
CORPUS_PARENTS = ("documents", "desktop", "home", "projects")
CORPUS_FILES = ("summary.txt", "plan.docx", "image.png", "budget.xlsx", "song.mp3", "scan.pdf")


def corpus(max_depth: int = 3, per_depth: int = 3) -> list[tuple[Scenario, dict[str, Any]]]:
    """Seeded-fault tasks: ``per_depth`` tasks for every fault depth 0..max_depth."""
    out = []
    i = 0
    for depth in range(max_depth + 1):
        for _ in range(per_depth):
            folder = CORPUS_FOLDERS[i % len(CORPUS_FOLDERS)]
            parent = CORPUS_PARENTS[i % len(CORPUS_PARENTS)]
            file = CORPUS_FILES[i % len(CORPUS_FILES)]
            task = f"Create a folder named {folder} in the {parent} directory and move {file} into it."
            spec = {
                "name": f"files-{i:02d}-depth{depth}",
                "task_text": task,
                "tool_manifest": "manifest.json",
                "oracle": {"expected_state": {f"folder {folder}": parent, f"file {file}": folder}},
                "scripted_agent": {"attempts": folder_plans(folder, parent, file, depth), "final_answer": "done"},
            }
            out.append((folder_scenario(task, folder, parent, file), spec))
            i += 1
    return out


def demo_tasks() -> list[tuple[Scenario, dict[str, Any]]]:
    fig = folder_scenario(FOLDER_TASK, "temp", "document", "report.pdf")
    tasks = [
        (fig, {
            "name": "folder-and-move",
            "task_text": FOLDER_TASK,
            "tool_manifest": "manifest.json",
            "oracle": {"expected_state": {"folder temp": "document", "file report.pdf": "temp"}},
            "scripted_agent": {"attempts": folder_plans("temp", "document", "report.pdf", 2), "final_answer": "Done."},
        }),
        (apples_scenario(), {
            "name": "apples",
            "task_text": apples_scenario().task,
            "tool_manifest": "manifest.json",
            "oracle": {"expected_state": {"apples in cart": "2"}},
            "scripted_agent": {"attempts": [[
                {"tool_name": "add_to_cart", "arguments": {"item": "apple", "quantity": 3}},
                {"tool_name": "remove_from_cart", "arguments": {"item": "apple", "quantity": 1}},
            ]], "final_answer": "Two apples remain in the cart."},
        }),
        (weather_scenario(), {
            "name": "weather",
            "task_text": weather_scenario().task,
            "tool_manifest": "manifest.json",
            "scripted_agent": {"attempts": [[
                {"tool_name": "get_weather", "arguments": {"city": "Seattle", "unit": "celsius"}},
            ]], "final_answer": "See the report above."},
        }),
    ]
    return tasks + corpus()


def demo_helper() -> RuleHelper:
    return RuleHelper([scenario for scenario, _ in demo_tasks()])


def build_demo(out_dir: str | Path, max_retries: int = 3) -> Path:
    """Write schemas, manifest, tasks and recorded fixtures under ``out_dir``."""
    out = Path(out_dir)
    (out / "tools").mkdir(parents=True, exist_ok=True)
    entries = []
    for schema in demo_tools():
        (out / "tools" / f"{schema.tool_name}.json").write_text(json.dumps(schema.to_document(), indent=2, sort_keys=True) + "\n")
        entries.append({"path": f"tools/{schema.tool_name}.json", "access_class": schema.access_class})
    write_manifest(out / "manifest.json", entries)
    tasks = demo_tasks()
    (out / "tasks.json").write_text(json.dumps([spec for _, spec in tasks], indent=2, sort_keys=True) + "\n")

    registry = ToolRegistry.from_schemas(demo_tools())
    store = FixtureStore(None, "record", upstream=ScriptedBackend(demo_helper()))
    env = LocalEnvironment(SessionStore({"manifest.json": registry}, store))
    for _, raw in tasks:
        spec = TaskSpec.from_dict(raw)
        run_task(spec.task_text, ScriptedAgent.from_spec(spec.scripted_agent), env, max_retries,
                 registry=registry, session_config={"manifest": spec.tool_manifest})
    store.write(out / "fixtures.jsonl")
    return out
