"""Command line: ``gats run | sweep | convert | serve | check | demo``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

from .errors import ToolSimError
from .gats import (
    CostModel,
    HttpEnvironment,
    HttpPassthrough,
    LlmPlanner,
    LocalEnvironment,
    ScriptedAgent,
    TaskSpec,
    oracle_passes,
    run_task,
    scaling_sweep,
)
from .gateway import GatewayConfig, build_backend, serve
from .llm import LlmBackend
from .report import plot_attempts, plot_sweep, write_sweep_csv
from .schema import ToolRegistry, load_manifest, validate_schema_document
from .sessions import SessionStore

log = logging.getLogger("toolsim")


def _backend(args) -> LlmBackend:
    return build_backend({"backend": args.backend, "fixtures": args.fixtures})


def _load_tasks(path: str) -> tuple[list[TaskSpec], dict[str, ToolRegistry]]:
    path_ = Path(path)
    raw = json.loads(path_.read_text())
    if not isinstance(raw, list):
        raise SystemExit(f"{path}: task file must be a JSON array")
    specs = [TaskSpec.from_dict(t) for t in raw]
    registries = {}
    for spec in specs:
        if spec.tool_manifest not in registries:
            registries[spec.tool_manifest] = load_manifest(path_.parent / spec.tool_manifest)
    return specs, registries


def _cost_model(path: str | None) -> CostModel:
    if not path:
        return CostModel()
    data = json.loads(Path(path).read_text())
    prices = {k: tuple(v) for k, v in data.get("prices", {}).items()}
    prices.setdefault("default", (0.0025, 0.01))
    return CostModel(prices, data.get("role_models", {}))


def _agent_factory(args, registries: dict[str, ToolRegistry], llm: LlmBackend):
    def make(spec: TaskSpec):
        if spec.scripted_agent is not None and args.planner != "llm":
            return ScriptedAgent.from_spec(spec.scripted_agent)
        return LlmPlanner(llm, registries[spec.tool_manifest])

    return make


def _environment(args, registries, llm):
    if args.env_url:
        return HttpEnvironment(args.env_url)
    return LocalEnvironment(SessionStore(registries, llm))


def cmd_run(args) -> int:
    specs, registries = _load_tasks(args.tasks)
    llm = _backend(args)
    env = _environment(args, registries, llm)
    make_agent = _agent_factory(args, registries, llm)
    passthrough = HttpPassthrough(args.passthrough_url) if args.passthrough_url else None
    if args.mode == "hybrid" and passthrough is None:
        raise SystemExit("--mode hybrid needs --passthrough-url")
    cost_model = _cost_model(args.pricing)
    results: list[dict[str, Any]] = []
    for spec in specs:
        result = run_task(
            spec.task_text,
            make_agent(spec),
            env,
            args.max_retries,
            registry=registries[spec.tool_manifest],
            mode=args.mode,
            passthrough=passthrough,
            session_config={"manifest": spec.tool_manifest, **spec.session},
            cost_model=cost_model,
        )
        entry = {"name": spec.name, "task_text": spec.task_text, "oracle_pass": oracle_passes(spec, result)}
        entry.update(result.to_dict(timing=args.timings))
        results.append(entry)
        log.info("%s: %s after %d attempt(s)", spec.name or spec.task_text[:40], result.outcome, len(result.attempts))
    n = len(results)
    summary = {
        "tasks": n,
        "max_retries": args.max_retries,
        "mode": args.mode,
        "successes": sum(r["outcome"] == "success" for r in results),
        "oracle_passes": sum(r["oracle_pass"] for r in results),
        "accuracy": sum(r["oracle_pass"] for r in results) / n if n else 0.0,
    }
    Path(args.out).write_text(json.dumps({"results": results, "summary": summary}, indent=2, sort_keys=True) + "\n")
    if args.figures:
        Path(args.figures).mkdir(parents=True, exist_ok=True)
        plot_attempts(results, Path(args.figures) / "attempts.png")
    print(f"{summary['oracle_passes']}/{n} tasks passed; results written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    specs, registries = _load_tasks(args.tasks)
    llm = _backend(args)
    env = _environment(args, registries, llm)
    retries = [int(x) for x in args.retries.split(",") if x.strip()]
    passthrough = HttpPassthrough(args.passthrough_url) if args.passthrough_url else None
    rows = scaling_sweep(
        specs,
        _agent_factory(args, registries, llm),
        env,
        retries,
        cost_model=_cost_model(args.pricing),
        mode=args.mode,
        passthrough=passthrough,
        registry=_merged(registries),
    )
    write_sweep_csv(rows, args.out)
    figure = args.figure or str(Path(args.out).with_suffix(".png"))
    plot_sweep(rows, figure)
    for row in rows:
        print(f"retries={row['retries']} accuracy={row['accuracy']:.4f} latency={row['mean_latency']:.3f}s cost={row['mean_cost']:.6f}")
    print(f"wrote {args.out} and {figure}")
    return 0


def _merged(registries: dict[str, ToolRegistry]) -> ToolRegistry:
    merged = ToolRegistry()
    for registry in registries.values():
        for schema in registry:
            if schema.tool_name not in merged:
                merged.register(schema)
    return merged


def cmd_convert(args) -> int:
    from .converter import convert_directory

    names = convert_directory(args.in_dir, args.out_dir, args.manifest, _backend(args))
    print(f"converted {len(names)} tool(s); manifest at {args.manifest}")
    return 0


def cmd_serve(args) -> int:
    serve(GatewayConfig.load(args.config))
    return 0


def cmd_check(args) -> int:
    bad = 0
    for name in args.files:
        verdict = validate_schema_document(Path(name).read_text())
        if verdict.valid:
            print(f"{name}: valid")
        else:
            bad += 1
            print(f"{name}: {len(verdict.violations)} violation(s)")
            for v in verdict.violations:
                print(f"  {v.code} at {v.path or '/'}: {v.message}")
    return 1 if bad else 0


def cmd_demo(args) -> int:
    from .demo import build_demo

    out = build_demo(args.out)
    print(f"demo written to {out}; try: gats run --tasks {out / 'tasks.json'} --fixtures {out / 'fixtures.jsonl'} --out results.json")
    return 0


def _llm_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("live", "replay", "replay_lenient", "record"), default="replay")
    p.add_argument("--fixtures", help="fixture file (JSON lines) for replay/record")


def _task_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tasks", required=True, help="JSON array of task specs")
    p.add_argument("--mode", choices=("full_sim", "hybrid"), default="full_sim")
    p.add_argument("--planner", choices=("auto", "llm"), default="auto", help="auto uses a task's scripted_agent when present")
    p.add_argument("--env-url", help="use a running gateway instead of an in-process environment")
    p.add_argument("--passthrough-url", help="base URL of real tools for hybrid mode")
    p.add_argument("--pricing", help="JSON file with per-model prices per 1k tokens")
    _llm_options(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gats", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the refinement loop over a task file")
    _task_options(p)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--timings", action="store_true", help="include wall-clock times (breaks byte-identical output)")
    p.add_argument("--figures", help="directory for an attempts histogram")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="accuracy/latency/cost against the retry budget")
    _task_options(p)
    p.add_argument("--retries", default="0,1,2,3")
    p.add_argument("--out", required=True, help="CSV output")
    p.add_argument("--figure", help="figure path (default: next to the CSV)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("convert", help="convert raw tool definitions into OpenAPI documents")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--manifest", required=True)
    _llm_options(p)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("serve", help="run the REST gateway")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("check", help="validate OpenAPI tool documents")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("demo", help="write a runnable offline demo (tools, tasks, fixtures)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ToolSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
