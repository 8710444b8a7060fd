"""Turn free-form tool definitions into validated OpenAPI documents."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from . import canonical
from .errors import ConvertError, LlmError
from .llm import LlmBackend, LlmRequest, parse_json_object
from .prompts import DEFAULT as DEFAULT_PROMPTS, PromptLibrary
from .schema import parse_schema, validate_schema_document, write_manifest

log = logging.getLogger(__name__)

HINT_FORMATS = ("python_function", "prose", "other")
REPAIR_ROUNDS = 2
_SUFFIX_HINTS = {".py": "python_function", ".txt": "prose", ".md": "prose"}


@dataclass(frozen=True)
class RawToolDefinition:
    text: str
    hint_format: str = "prose"

    def __post_init__(self) -> None:
        if self.hint_format not in HINT_FORMATS:
            raise ValueError(f"hint_format must be one of {HINT_FORMATS}")


def convert(
    raw: RawToolDefinition,
    llm: LlmBackend | None,
    prompts: PromptLibrary = DEFAULT_PROMPTS,
    repair_rounds: int = REPAIR_ROUNDS,
) -> str:
    """Return canonical JSON text of a document that passes validation."""
    if not raw.text or not raw.text.strip():
        raise ConvertError("empty_definition", "tool definition text is empty")
    if llm is None:
        raise ConvertError("llm_unavailable", "no LLM backend configured")
    payload = {"definition": raw.text, "format": raw.hint_format}
    feedback = None
    violations: list[dict] = []
    for _ in range(repair_rounds + 1):
        try:
            text = llm.complete(LlmRequest("schema_converter", prompts.render("schema_converter", payload, feedback)))
        except LlmError as exc:
            raise ConvertError("llm_unavailable", str(exc)) from exc
        doc = parse_json_object(text)
        verdict = validate_schema_document(doc if doc is not None else text)
        if verdict.valid:
            return canonical.dumps(doc)
        violations = [v.to_dict() for v in verdict.violations]
        feedback = {
            "error": "The document failed validation. Return a corrected document.",
            "violations": violations,
        }
    raise ConvertError("unvalidatable_after_retries", "converted document never passed validation", details=violations)


def convert_directory(in_dir: str | Path, out_dir: str | Path, manifest: str | Path, llm: LlmBackend) -> list[str]:
    """Convert every definition file in ``in_dir``; write schemas and a manifest.

    Returns the tool names written, in input order.
    """
    in_dir, out_dir, manifest = Path(in_dir), Path(out_dir), Path(manifest)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, names = [], []
    for src in sorted(p for p in in_dir.iterdir() if p.is_file()):
        hint = _SUFFIX_HINTS.get(src.suffix, "other")
        document = convert(RawToolDefinition(src.read_text(), hint), llm)
        schema = parse_schema(document)
        target = out_dir / f"{schema.tool_name}.json"
        target.write_text(json.dumps(json.loads(document), indent=2, sort_keys=True) + "\n")
        entries.append({"path": os.path.relpath(target, manifest.parent), "access_class": schema.access_class})
        names.append(schema.tool_name)
        log.info("converted %s -> %s", src.name, target.name)
    write_manifest(manifest, entries)
    return names
