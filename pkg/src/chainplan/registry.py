"""Tool registry: load, validate, and serve externally described tool specs.

Tools are described in JSON files (see ``load_registry``) so that nothing else
in the system hard-codes tool knowledge. A registry is immutable once built;
derived structures (retrieval corpora, type graphs, schema automatons) key on
its ``version`` and must never silently desync from it.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

_IDENTIFIER = re.compile(r"^[A-Za-z0-9_]+$")

PRIMITIVES = ("string", "integer", "float", "boolean")

# Plans never need more than a list of objects; deeper nesting is rejected.
MAX_LIST_DEPTH = 2


class RegistryError(ValueError):
    """A tool document could not be loaded into a valid registry."""

    def __init__(self, message: str, tool: str | None = None, path: str | None = None):
        parts = [message]
        if tool is not None:
            parts.append(f"tool={tool}")
        if path is not None:
            parts.append(f"at={path}")
        super().__init__("; ".join(parts))
        self.tool = tool
        self.path = path


@dataclass(frozen=True)
class ValueType:
    """Type of a tool argument or return value.

    ``kind`` is one of ``"primitive"`` (with ``primitive`` set), ``"list"``
    (with ``element`` set) or ``"object"`` (with an opaque ``type_name``).
    Equality is structural; object types compare by exact name.
    """

    kind: str
    primitive: str | None = None
    element: "ValueType | None" = None
    type_name: str | None = None

    @property
    def is_list(self) -> bool:
        return self.kind == "list"

    def render(self) -> str:
        if self.kind == "primitive":
            return self.primitive or "?"
        if self.kind == "list":
            return f"array of {self.element.render()}" if self.element else "array of ?"
        return f"object:{self.type_name}"


def primitive(kind: str) -> ValueType:
    if kind not in PRIMITIVES:
        raise ValueError(f"unknown primitive kind: {kind!r}")
    return ValueType(kind="primitive", primitive=kind)


def list_of(element: ValueType) -> ValueType:
    return ValueType(kind="list", element=element)


def object_type(name: str) -> ValueType:
    return ValueType(kind="object", type_name=name)


def parse_type(text: str, tool: str | None = None, path: str | None = None) -> ValueType:
    """Parse a type keyword: ``string``, ``integer``, ``float``, ``boolean``,
    ``array of <T>`` or ``object:<TypeName>``."""
    spec = text.strip()
    depth = 0
    while spec.startswith("array of "):
        depth += 1
        if depth > MAX_LIST_DEPTH:
            raise RegistryError(f"list nesting deeper than {MAX_LIST_DEPTH}: {text!r}", tool, path)
        spec = spec[len("array of "):].strip()
    if spec.startswith("object:"):
        name = spec[len("object:"):].strip()
        if not name or not _IDENTIFIER.match(name):
            raise RegistryError(f"bad object type name in {text!r}", tool, path)
        result = object_type(name)
    elif spec in PRIMITIVES:
        result = primitive(spec)
    else:
        raise RegistryError(f"unknown type keyword {spec!r}", tool, path)
    for _ in range(depth):
        result = list_of(result)
    return result


@dataclass(frozen=True)
class ArgSpec:
    name: str
    description: str
    value_type: ValueType
    required: bool = False


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    arguments: tuple[ArgSpec, ...]
    returns: ValueType

    def argument(self, name: str) -> ArgSpec | None:
        for arg in self.arguments:
            if arg.name == name:
                return arg
        return None

    @property
    def argument_names(self) -> tuple[str, ...]:
        return tuple(arg.name for arg in self.arguments)


@dataclass(frozen=True)
class Registry:
    """Immutable, insertion-ordered collection of tool specs."""

    tools: dict[str, ToolSpec]
    version: str

    @classmethod
    def from_tools(cls, specs: list[ToolSpec] | tuple[ToolSpec, ...], version: str | None = None) -> "Registry":
        tools: dict[str, ToolSpec] = {}
        for spec in specs:
            if spec.name in tools:
                raise RegistryError("duplicate tool name", tool=spec.name)
            tools[spec.name] = spec
        reg = cls(tools=tools, version=version or "")
        if version is None:
            digest = hashlib.sha256(serialize_registry(reg).encode("utf-8")).hexdigest()
            reg = cls(tools=tools, version=digest[:12])
        return reg

    def get(self, name: str) -> ToolSpec | None:
        """Exact, case-sensitive lookup; ``None`` signals an unknown tool."""
        return self.tools.get(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.tools)

    def __len__(self) -> int:
        return len(self.tools)

    def subset(self, names: list[str] | tuple[str, ...]) -> "Registry":
        """Registry view restricted to ``names``, keeping the parent version."""
        picked = {n: self.tools[n] for n in names if n in self.tools}
        return Registry(tools=picked, version=self.version)


def _load_tool(entry: object, index: int) -> ToolSpec:
    path = f"$[{index}]"
    if not isinstance(entry, dict):
        raise RegistryError("tool entry is not an object", path=path)
    for key in ("tool_name", "tool_description", "return_type"):
        if key not in entry:
            raise RegistryError(f"missing required field {key!r}", tool=entry.get("tool_name"), path=path)
    name = entry["tool_name"]
    if not isinstance(name, str):
        raise RegistryError("tool_name is not a string", path=path)
    args: list[ArgSpec] = []
    for j, raw in enumerate(entry.get("arguments", [])):
        arg_path = f"{path}.arguments[{j}]"
        if not isinstance(raw, dict):
            raise RegistryError("argument entry is not an object", tool=name, path=arg_path)
        for key in ("argument_name", "argument_type"):
            if key not in raw:
                raise RegistryError(f"missing required field {key!r}", tool=name, path=arg_path)
        args.append(
            ArgSpec(
                name=raw["argument_name"],
                description=raw.get("argument_description", ""),
                value_type=parse_type(raw["argument_type"], tool=name, path=arg_path),
                required=bool(raw.get("required", False)),
            )
        )
    return ToolSpec(
        name=name,
        description=entry["tool_description"],
        arguments=tuple(args),
        returns=parse_type(entry["return_type"], tool=name, path=f"{path}.return_type"),
    )


def load_registry(source: str | Path) -> Registry:
    """Load a registry from a tool file path or raw JSON text.

    A ``str`` that starts with ``[`` (after stripping) is treated as JSON
    text; anything else is treated as a file path. Tool order is preserved
    for deterministic iteration.
    """
    if isinstance(source, Path):
        text = source.read_text(encoding="utf-8")
    elif source.lstrip().startswith("["):
        text = source
    else:
        text = Path(source).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegistryError(f"parse failure: {exc}") from exc
    if not isinstance(data, list):
        raise RegistryError("tool document must be a JSON array")
    specs = [_load_tool(entry, i) for i, entry in enumerate(data)]
    seen: set[str] = set()
    for spec in specs:
        if spec.name in seen:
            raise RegistryError("duplicate tool name", tool=spec.name)
        seen.add(spec.name)
    return Registry.from_tools(specs)


def serialize_registry(registry: Registry) -> str:
    """Canonical wire-format JSON for the registry's tool set."""
    doc = []
    for spec in registry.tools.values():
        doc.append(
            {
                "tool_name": spec.name,
                "tool_description": spec.description,
                "arguments": [
                    {
                        "argument_name": a.name,
                        "argument_description": a.description,
                        "argument_type": a.value_type.render(),
                        "required": a.required,
                    }
                    for a in spec.arguments
                ],
                "return_type": spec.returns.render(),
            }
        )
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    location: str
    message: str


def _check_type(vt: ValueType, location: str, out: list[Diagnostic], depth: int = 0) -> None:
    if vt.kind == "list":
        if depth + 1 > MAX_LIST_DEPTH:
            out.append(Diagnostic("error", location, f"list nesting deeper than {MAX_LIST_DEPTH}"))
        elif vt.element is not None:
            _check_type(vt.element, location, out, depth + 1)
    elif vt.kind == "object":
        if not vt.type_name or not _IDENTIFIER.match(vt.type_name):
            out.append(Diagnostic("error", location, "object type name is not a valid identifier"))


def validate_registry(registry: Registry) -> list[Diagnostic]:
    """Check every tool/argument invariant; empty list means all hold."""
    out: list[Diagnostic] = []
    for spec in registry.tools.values():
        loc = f"tool {spec.name!r}"
        if not spec.name or not _IDENTIFIER.match(spec.name):
            out.append(Diagnostic("error", loc, "tool name is not a valid identifier"))
        if not spec.description:
            out.append(Diagnostic("warning", loc, "tool description is empty"))
        seen: set[str] = set()
        for arg in spec.arguments:
            arg_loc = f"{loc} argument {arg.name!r}"
            if arg.name in seen:
                out.append(Diagnostic("error", arg_loc, "duplicate argument name"))
            seen.add(arg.name)
            if not arg.name or not _IDENTIFIER.match(arg.name):
                out.append(Diagnostic("error", arg_loc, "argument name is not a valid identifier"))
            if not arg.description:
                out.append(Diagnostic("warning", arg_loc, "argument description is empty"))
            _check_type(arg.value_type, arg_loc, out)
        _check_type(spec.returns, f"{loc} return type", out)
    return out


_DATA_DIR = Path(__file__).resolve().parent / "data"


def fixture_tools_path() -> Path:
    """Path of the bundled nine-tool fixture (implementer-authored test data)."""
    return _DATA_DIR / "tools_worktracker.json"
