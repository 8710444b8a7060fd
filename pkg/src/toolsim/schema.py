"""Tool schemas: the OpenAPI 3.1 subset used to describe simulated tools.

A tool is one OpenAPI operation with a JSON request body (its parameters) and
an optional JSON response body. Documents are parsed into immutable
``ToolSchema`` objects; ``validate_schema_document`` reports every problem in
a document while ``parse_schema`` raises on the first.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from . import canonical
from .errors import SchemaError, UnknownTool

JSON_TYPES = ("integer", "number", "string", "boolean", "array", "object")
ACCESS_CLASSES = ("read_only", "write")
HTTP_METHODS = ("get", "post", "put", "patch", "delete")
OPENAPI_VERSION = "3.1.0"
_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


def json_type_matches(value: Any, type_name: str) -> bool:
    """True if a decoded JSON value belongs to the named JSON type.

    Integers are accepted where ``number`` is declared; floats are never
    integers, and booleans are never numbers.
    """
    if type_name == "integer":
        return isinstance(value, int) and not isinstance(value, bool)
    if type_name == "number":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if type_name == "string":
        return isinstance(value, str)
    if type_name == "boolean":
        return isinstance(value, bool)
    if type_name == "array":
        return isinstance(value, list)
    if type_name == "object":
        return isinstance(value, dict)
    return False


def json_type_of(value: Any) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    if isinstance(value, dict):
        return "object"
    return "null"


@dataclass(frozen=True)
class ConstraintSet:
    minimum: int | float | None = None
    maximum: int | float | None = None
    enum_values: tuple | None = None
    min_length: int | None = None
    max_length: int | None = None
    pattern: str | None = None

    def is_empty(self) -> bool:
        return all(getattr(self, f) is None for f in self.__dataclass_fields__)


@dataclass(frozen=True)
class ParameterSpec:
    """A named, typed node. Arrays carry ``items``; objects carry ``properties``.

    The same node type describes tool parameters and response bodies, so a
    single structural checker serves both.
    """

    name: str
    type: str
    required: bool = False
    constraints: ConstraintSet | None = None
    description: str = ""
    items: ParameterSpec | None = None
    properties: tuple[ParameterSpec, ...] = ()

    def property(self, name: str) -> ParameterSpec | None:
        for prop in self.properties:
            if prop.name == name:
                return prop
        return None


@dataclass(frozen=True)
class ToolSchema:
    tool_name: str
    description: str = ""
    parameters: tuple[ParameterSpec, ...] = ()
    response_schema: ParameterSpec | None = None
    access_class: str = "write"

    def parameter(self, name: str) -> ParameterSpec | None:
        for param in self.parameters:
            if param.name == name:
                return param
        return None

    @property
    def required_names(self) -> list[str]:
        return [p.name for p in self.parameters if p.required]

    def to_document(self) -> dict[str, Any]:
        return serialize_schema(self)

    def to_json(self) -> str:
        return canonical.dumps(serialize_schema(self))


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "path": self.path, "message": self.message}


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    violations: tuple[Violation, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"valid": self.valid, "violations": [v.to_dict() for v in self.violations]}


def _pointer(*parts: str) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


class _DuplicateKeys(dict):
    """dict produced by the JSON decoder that remembers keys seen twice."""

    duplicates: tuple[str, ...] = ()


def _pairs_hook(pairs: list[tuple[str, Any]]) -> dict:
    out = _DuplicateKeys()
    dupes = []
    for key, value in pairs:
        if key in out:
            dupes.append(key)
        out[key] = value
    out.duplicates = tuple(dupes)
    return out


class _Walker:
    """Walks a decoded document, collecting violations and building specs."""

    def __init__(self) -> None:
        self.violations: list[Violation] = []

    def fail(self, code: str, path: str, message: str) -> None:
        self.violations.append(Violation(code, path, message))

    def check_dupes(self, node: Any, path: str, code: str = "duplicate_key") -> None:
        for key in getattr(node, "duplicates", ()):
            self.fail(code, path + _pointer(key), f"key '{key}' appears more than once")

    def document(self, doc: Any) -> ToolSchema | None:
        if not isinstance(doc, dict):
            self.fail("missing_operation", "", "document root must be a JSON object")
            return None
        self.check_dupes(doc, "")
        version = doc.get("openapi")
        if not (isinstance(version, str) and version.startswith("3.1")):
            self.fail("unsupported_version", "/openapi", f"expected OpenAPI 3.1.x, got {version!r}")
        paths = doc.get("paths")
        if not isinstance(paths, dict) or not paths:
            self.fail("missing_operation", "/paths", "document declares no operation")
            return None
        self.check_dupes(paths, "/paths")
        operations = [
            (route, method, op)
            for route, item in paths.items()
            if isinstance(item, dict)
            for method, op in item.items()
            if method in HTTP_METHODS
        ]
        if not operations:
            self.fail("missing_operation", "/paths", "document declares no operation")
            return None
        if len(operations) > 1:
            self.fail("multiple_operations", "/paths", f"expected one operation, found {len(operations)}")
        route, method, op = operations[0]
        return self.operation(op, _pointer("paths", route, method))

    def operation(self, op: Any, path: str) -> ToolSchema | None:
        if not isinstance(op, dict):
            self.fail("missing_operation", path, "operation must be an object")
            return None
        self.check_dupes(op, path)
        name = op.get("operationId")
        if not isinstance(name, str) or not _IDENTIFIER.match(name):
            self.fail("missing_name", path + "/operationId", "operationId must be an identifier string")
            name = None
        description = op.get("description", op.get("summary", ""))
        if not isinstance(description, str):
            self.fail("malformed_node", path + "/description", "description must be a string")
            description = ""
        access = op.get("x-access-class", "write")
        if access not in ACCESS_CLASSES:
            self.fail("invalid_access_class", path + "/x-access-class", f"access class must be one of {ACCESS_CLASSES}")
            access = "write"

        params: tuple[ParameterSpec, ...] = ()
        body = op.get("requestBody")
        if body is not None:
            body_schema = self._json_content(body, path + "/requestBody")
            if body_schema is not None:
                spath = path + "/requestBody/content/application~1json/schema"
                root = self.node("body", body_schema, spath, required=True)
                if root is not None and root.type != "object":
                    self.fail("malformed_node", spath + "/type", "request body schema must be an object")
                elif root is not None:
                    params = root.properties

        response = None
        responses = op.get("responses")
        if responses is not None:
            if not isinstance(responses, dict):
                self.fail("malformed_node", path + "/responses", "responses must be an object")
            else:
                self.check_dupes(responses, path + "/responses")
                ok = sorted(code for code in responses if str(code).startswith("2"))
                if ok:
                    rpath = path + _pointer("responses", ok[0])
                    rschema = self._json_content(responses[ok[0]], rpath, optional=True)
                    if rschema is not None and rschema != {}:
                        response = self.node("response", rschema, rpath + "/content/application~1json/schema", required=True)

        if name is None:
            return None
        return ToolSchema(name, description, params, response, access)

    def _json_content(self, holder: Any, path: str, optional: bool = False) -> Any:
        if not isinstance(holder, dict):
            self.fail("malformed_node", path, "expected an object")
            return None
        content = holder.get("content")
        if content is None and optional:
            return None
        if not isinstance(content, dict) or "application/json" not in content:
            self.fail("malformed_node", path + "/content", "only application/json content is supported")
            return None
        media = content["application/json"]
        if not isinstance(media, dict) or "schema" not in media:
            self.fail("malformed_node", path + "/content/application~1json", "media type must declare a schema")
            return None
        return media["schema"]

    def node(self, name: str, raw: Any, path: str, required: bool = False) -> ParameterSpec | None:
        if not isinstance(raw, dict):
            self.fail("malformed_node", path, f"schema for '{name}' must be an object")
            return None
        self.check_dupes(raw, path)
        type_name = raw.get("type")
        if type_name not in JSON_TYPES:
            self.fail("invalid_type", path + "/type", f"'{name}' has unsupported type {type_name!r}; expected one of {', '.join(JSON_TYPES)}")
            return None
        description = raw.get("description", "")
        if not isinstance(description, str):
            self.fail("malformed_node", path + "/description", "description must be a string")
            description = ""
        constraints = self.constraints(name, type_name, raw, path)

        items = None
        if type_name == "array" and "items" in raw:
            items = self.node(f"{name}[]", raw["items"], path + "/items")

        props: tuple[ParameterSpec, ...] = ()
        if type_name == "object":
            props = self.object_members(name, raw, path)
        return ParameterSpec(name, type_name, required, constraints, description, items, props)

    def object_members(self, name: str, raw: dict, path: str) -> tuple[ParameterSpec, ...]:
        properties = raw.get("properties", {})
        required = raw.get("required", [])
        if not isinstance(properties, dict):
            self.fail("malformed_node", path + "/properties", "properties must be an object")
            return ()
        self.check_dupes(properties, path + "/properties", code="duplicate_parameter")
        if not isinstance(required, list) or not all(isinstance(r, str) for r in required):
            self.fail("malformed_node", path + "/required", "required must be a list of names")
            required = []
        seen = set()
        for i, req in enumerate(required):
            if req in seen:
                self.fail("duplicate_parameter", path + f"/required/{i}", f"'{req}' listed as required twice")
            seen.add(req)
            if req not in properties:
                self.fail("unknown_required", path + f"/required/{i}", f"required parameter '{req}' is not declared")
        members = []
        for prop_name, prop_raw in properties.items():
            if not _IDENTIFIER.match(prop_name):
                self.fail("missing_name", path + _pointer("properties", prop_name), f"invalid parameter name {prop_name!r}")
                continue
            spec = self.node(prop_name, prop_raw, path + _pointer("properties", prop_name), prop_name in seen)
            if spec is not None:
                members.append(spec)
        return tuple(members)

    def constraints(self, name: str, type_name: str, raw: dict, path: str) -> ConstraintSet | None:
        bad = len(self.violations)

        def inconsistent(key: str, message: str) -> None:
            self.fail("inconsistent_constraints", path + "/" + key, f"'{name}': {message}")

        numeric = type_name in ("integer", "number")
        bounds = {}
        for key in ("minimum", "maximum"):
            if key in raw:
                value = raw[key]
                if not numeric:
                    inconsistent(key, f"{key} is only allowed on integer/number, not {type_name}")
                elif not json_type_matches(value, "number"):
                    inconsistent(key, f"{key} must be a number")
                else:
                    bounds[key] = value
        if "minimum" in bounds and "maximum" in bounds and bounds["minimum"] > bounds["maximum"]:
            inconsistent("minimum", f"minimum {bounds['minimum']} exceeds maximum {bounds['maximum']}")

        lengths = {}
        for key in ("minLength", "maxLength"):
            if key in raw:
                value = raw[key]
                if type_name != "string":
                    inconsistent(key, f"{key} is only allowed on string, not {type_name}")
                elif not json_type_matches(value, "integer") or value < 0:
                    inconsistent(key, f"{key} must be a non-negative integer")
                else:
                    lengths[key] = value
        if "minLength" in lengths and "maxLength" in lengths and lengths["minLength"] > lengths["maxLength"]:
            inconsistent("minLength", f"minLength {lengths['minLength']} exceeds maxLength {lengths['maxLength']}")

        pattern = raw.get("pattern")
        if "pattern" in raw:
            if type_name != "string":
                inconsistent("pattern", f"pattern is only allowed on string, not {type_name}")
            elif not isinstance(pattern, str):
                inconsistent("pattern", "pattern must be a string")
            else:
                try:
                    re.compile(pattern)
                except re.error as exc:
                    inconsistent("pattern", f"pattern does not compile: {exc}")

        enum_values = None
        if "enum" in raw:
            values = raw["enum"]
            if not isinstance(values, list) or not values:
                inconsistent("enum", "enum must be a non-empty list")
            else:
                wrong = [v for v in values if not json_type_matches(v, type_name)]
                if wrong:
                    inconsistent("enum", f"enum values {wrong!r} do not match type {type_name}")
                enum_values = tuple(values)

        if len(self.violations) > bad:
            return None
        cs = ConstraintSet(
            minimum=bounds.get("minimum"),
            maximum=bounds.get("maximum"),
            enum_values=enum_values,
            min_length=lengths.get("minLength"),
            max_length=lengths.get("maxLength"),
            pattern=pattern,
        )
        return None if cs.is_empty() else cs


def _decode(document: str | bytes | dict) -> tuple[Any, Violation | None]:
    if isinstance(document, dict):
        return document, None
    try:
        return json.loads(document, object_pairs_hook=_pairs_hook), None
    except (ValueError, TypeError) as exc:
        return None, Violation("malformed_json", "", f"document is not valid JSON: {exc}")


def validate_schema_document(document: str | bytes | dict) -> ValidityVerdict:
    """Check a document against the supported subset, listing every violation."""
    doc, err = _decode(document)
    if err is not None:
        return ValidityVerdict(False, (err,))
    walker = _Walker()
    walker.document(doc)
    return ValidityVerdict(not walker.violations, tuple(walker.violations))


def parse_schema(document: str | bytes | dict) -> ToolSchema:
    doc, err = _decode(document)
    if err is not None:
        raise SchemaError(err.code, err.message, err.path, [err])
    walker = _Walker()
    schema = walker.document(doc)
    if walker.violations:
        first = walker.violations[0]
        raise SchemaError(first.code, first.message, first.path, walker.violations)
    assert schema is not None
    return schema


def _serialize_node(spec: ParameterSpec) -> dict[str, Any]:
    out: dict[str, Any] = {"type": spec.type}
    if spec.description:
        out["description"] = spec.description
    c = spec.constraints
    if c is not None:
        for attr, key in (
            ("minimum", "minimum"),
            ("maximum", "maximum"),
            ("min_length", "minLength"),
            ("max_length", "maxLength"),
            ("pattern", "pattern"),
        ):
            if getattr(c, attr) is not None:
                out[key] = getattr(c, attr)
        if c.enum_values is not None:
            out["enum"] = list(c.enum_values)
    if spec.items is not None:
        out["items"] = _serialize_node(spec.items)
    if spec.type == "object" and spec.properties:
        out["properties"] = {p.name: _serialize_node(p) for p in spec.properties}
        # sorted so the document does not depend on property order
        required = sorted(p.name for p in spec.properties if p.required)
        if required:
            out["required"] = required
    return out


def serialize_schema(schema: ToolSchema) -> dict[str, Any]:
    """Inverse of ``parse_schema`` on the supported subset."""
    op: dict[str, Any] = {"operationId": schema.tool_name}
    if schema.description:
        op["description"] = schema.description
    if schema.access_class != "write":
        op["x-access-class"] = schema.access_class
    if schema.parameters:
        body = _serialize_node(ParameterSpec("body", "object", True, properties=schema.parameters))
        body.setdefault("properties", {})
        op["requestBody"] = {"required": True, "content": {"application/json": {"schema": body}}}
    ok: dict[str, Any] = {"description": "Successful response"}
    if schema.response_schema is not None:
        ok["content"] = {"application/json": {"schema": _serialize_node(schema.response_schema)}}
    op["responses"] = {"200": ok}
    return {
        "openapi": OPENAPI_VERSION,
        "info": {"title": schema.tool_name, "version": "1.0.0"},
        "paths": {"/" + schema.tool_name: {"post": op}},
    }


@dataclass
class ToolRegistry:
    """Name-to-schema map. Populate during load, then treat as read-only."""

    schemas: dict[str, ToolSchema] = field(default_factory=dict)
    source_documents: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def register(self, schema: ToolSchema, source: str = "<inline>") -> ToolRegistry:
        with self._lock:
            if schema.tool_name in self.schemas:
                raise SchemaError("duplicate_name", f"tool '{schema.tool_name}' is already registered", "/operationId")
            self.schemas[schema.tool_name] = schema
            self.source_documents[schema.tool_name] = source
        return self

    def lookup(self, tool_name: str) -> ToolSchema:
        try:
            return self.schemas[tool_name]
        except KeyError:
            raise UnknownTool(message=f"no tool named '{tool_name}'") from None

    def __contains__(self, tool_name: str) -> bool:
        return tool_name in self.schemas

    def __len__(self) -> int:
        return len(self.schemas)

    def __iter__(self):
        return iter(self.schemas.values())

    @classmethod
    def from_schemas(cls, schemas: Iterable[ToolSchema]) -> ToolRegistry:
        registry = cls()
        for schema in schemas:
            registry.register(schema)
        return registry


def register(registry: ToolRegistry, schema: ToolSchema) -> ToolRegistry:
    return registry.register(schema)


def load_manifest(path: str | Path) -> ToolRegistry:
    """Load every schema file a manifest lists.

    Manifest format::

        {"tools": [{"path": "get_weather.json", "access_class": "read_only"}, ...]}

    Paths are relative to the manifest. Entries may also be bare path strings.
    """
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise SchemaError("malformed_manifest", f"cannot read manifest {path}: {exc}") from exc
    entries = manifest.get("tools") if isinstance(manifest, dict) else manifest
    if not isinstance(entries, list):
        raise SchemaError("malformed_manifest", "manifest must list tools")
    registry = ToolRegistry()
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            entry = {"path": entry}
        file = path.parent / entry["path"]
        try:
            text = file.read_text()
        except OSError as exc:
            raise SchemaError("malformed_manifest", f"cannot read {file}: {exc}", f"/tools/{i}") from exc
        schema = parse_schema(text)
        override = entry.get("access_class")
        if override is not None:
            if override not in ACCESS_CLASSES:
                raise SchemaError("invalid_access_class", f"bad access class {override!r}", f"/tools/{i}/access_class")
            schema = replace(schema, access_class=override)
        registry.register(schema, source=str(file))
    return registry


def write_manifest(path: str | Path, entries: list[dict[str, Any]]) -> None:
    Path(path).write_text(json.dumps({"tools": entries}, indent=2, sort_keys=True) + "\n")
