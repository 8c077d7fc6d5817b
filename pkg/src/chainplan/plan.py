"""Plan wire format: ordered tool calls chained with ``$$PREV[i]`` references.

The wire format is a JSON array of calls::

    [{"tool_name": str,
      "arguments": [{"argument_name": str,
                     "argument_value": <scalar | "$$PREV[i]" | array | object>}]}]

``"$$PREV[i]"`` strings (exact pattern, 0-indexed) decode to :class:`PrevRef`;
every other string stays a literal. Parsing and serialization are pure, and
all types here are immutable values.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Iterator, Union

PREV_REF_PATTERN = re.compile(r"^\$\$PREV\[(\d+)\]$")


@dataclass(frozen=True)
class Literal:
    """A plain JSON value (scalar or object) used as an argument."""

    value: Any


@dataclass(frozen=True)
class PrevRef:
    """Reference to the output of the ``index``-th call in the same plan."""

    index: int

    def render(self) -> str:
        return f"$$PREV[{self.index}]"


@dataclass(frozen=True)
class ListOf:
    elements: tuple["ArgValue", ...]


ArgValue = Union[Literal, PrevRef, ListOf]


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: tuple[tuple[str, "ArgValue"], ...] = ()

    def argument(self, name: str) -> "ArgValue | None":
        for arg_name, value in self.arguments:
            if arg_name == name:
                return value
        return None

    @property
    def argument_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.arguments)


@dataclass(frozen=True)
class Plan:
    calls: tuple[ToolCall, ...] = ()

    @property
    def tool_sequence(self) -> tuple[str, ...]:
        return tuple(call.tool_name for call in self.calls)


@dataclass(frozen=True)
class ParseOutcome:
    """Result of :func:`parse_plan`: exactly one of ok / invalid JSON /
    schema violation. Invalid JSON feeds the invalid-JSON-rate metric."""

    kind: str  # "ok" | "invalid_json" | "schema_violation"
    plan: Plan | None = None
    path: str | None = None
    detail: str | None = None

    @property
    def ok(self) -> bool:
        return self.kind == "ok"

    @classmethod
    def of(cls, plan: Plan) -> "ParseOutcome":
        return cls(kind="ok", plan=plan)

    @classmethod
    def invalid_json(cls, detail: str) -> "ParseOutcome":
        return cls(kind="invalid_json", detail=detail)

    @classmethod
    def violation(cls, path: str, detail: str) -> "ParseOutcome":
        return cls(kind="schema_violation", path=path, detail=detail)


class _Violation(Exception):
    def __init__(self, path: str, detail: str):
        super().__init__(f"{detail} (at {path})")
        self.path = path
        self.detail = detail


def _decode_value(raw: Any, path: str) -> ArgValue:
    if isinstance(raw, str):
        match = PREV_REF_PATTERN.match(raw)
        if match:
            return PrevRef(index=int(match.group(1)))
        return Literal(raw)
    if isinstance(raw, list):
        return ListOf(tuple(_decode_value(item, f"{path}/{i}") for i, item in enumerate(raw)))
    # Scalars and objects stay literal; prev-ref strings nested inside
    # objects are NOT recognized (references live at argument top level
    # or directly inside an array).
    return Literal(raw)


def plan_from_data(data: Any) -> ParseOutcome:
    """Build a plan from already-decoded JSON data, checking the wire shape."""
    try:
        if not isinstance(data, list):
            raise _Violation("", "plan must be a JSON array of calls")
        calls: list[ToolCall] = []
        for i, raw_call in enumerate(data):
            call_path = f"/{i}"
            if not isinstance(raw_call, dict):
                raise _Violation(call_path, "call must be a JSON object")
            if set(raw_call) != {"tool_name", "arguments"}:
                raise _Violation(call_path, "call must have exactly tool_name and arguments")
            name = raw_call["tool_name"]
            if not isinstance(name, str):
                raise _Violation(f"{call_path}/tool_name", "tool_name must be a string")
            raw_args = raw_call["arguments"]
            if not isinstance(raw_args, list):
                raise _Violation(f"{call_path}/arguments", "arguments must be an array")
            pairs: list[tuple[str, ArgValue]] = []
            seen: set[str] = set()
            for j, raw_arg in enumerate(raw_args):
                arg_path = f"{call_path}/arguments/{j}"
                if not isinstance(raw_arg, dict):
                    raise _Violation(arg_path, "argument must be a JSON object")
                if set(raw_arg) != {"argument_name", "argument_value"}:
                    raise _Violation(arg_path, "argument must have exactly argument_name and argument_value")
                arg_name = raw_arg["argument_name"]
                if not isinstance(arg_name, str):
                    raise _Violation(f"{arg_path}/argument_name", "argument_name must be a string")
                if arg_name in seen:
                    raise _Violation(f"{arg_path}/argument_name", f"duplicate argument name {arg_name!r}")
                seen.add(arg_name)
                pairs.append((arg_name, _decode_value(raw_arg["argument_value"], f"{arg_path}/argument_value")))
            calls.append(ToolCall(tool_name=name, arguments=tuple(pairs)))
        return ParseOutcome.of(Plan(calls=tuple(calls)))
    except _Violation as exc:
        return ParseOutcome.violation(exc.path, exc.detail)


def parse_plan(text: str) -> ParseOutcome:
    """Parse plan wire-format text. Forward/self references still parse;
    they are validated separately so metrics can score malformed plans."""
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, ValueError) as exc:
        return ParseOutcome.invalid_json(str(exc))
    return plan_from_data(data)


def _encode_value(value: ArgValue) -> Any:
    if isinstance(value, PrevRef):
        return value.render()
    if isinstance(value, ListOf):
        return [_encode_value(item) for item in value.elements]
    return value.value


def plan_to_data(plan: Plan) -> list:
    return [
        {
            "tool_name": call.tool_name,
            "arguments": [
                {"argument_name": name, "argument_value": _encode_value(value)}
                for name, value in call.arguments
            ],
        }
        for call in plan.calls
    ]


def serialize_plan(plan: Plan) -> str:
    """Canonical single-line form: no insignificant whitespace, key order
    tool_name then arguments, arguments in stored order, ASCII only.

    Note: a hand-built ``Literal`` whose string happens to match the
    ``$$PREV[i]`` pattern is indistinguishable from a reference on the wire
    and re-parses as one; parsing never produces such literals.
    """
    return json.dumps(plan_to_data(plan), separators=(",", ":"), ensure_ascii=True)


def iter_prev_refs(value: ArgValue) -> Iterator[PrevRef]:
    """Yield every PrevRef in ``value``, including inside nested arrays."""
    if isinstance(value, PrevRef):
        yield value
    elif isinstance(value, ListOf):
        for item in value.elements:
            yield from iter_prev_refs(item)


@dataclass(frozen=True)
class RefDiagnostic:
    position: int
    argument: str
    index: int
    message: str


def validate_refs(plan: Plan) -> list[RefDiagnostic]:
    """One diagnostic per reference that does not point strictly backwards."""
    out: list[RefDiagnostic] = []
    for position, call in enumerate(plan.calls):
        for arg_name, value in call.arguments:
            for ref in iter_prev_refs(value):
                if ref.index >= position:
                    kind = "self" if ref.index == position else "forward/out-of-range"
                    out.append(
                        RefDiagnostic(
                            position=position,
                            argument=arg_name,
                            index=ref.index,
                            message=f"{kind} reference $$PREV[{ref.index}] at call {position}",
                        )
                    )
                elif ref.index < 0:
                    out.append(
                        RefDiagnostic(
                            position=position,
                            argument=arg_name,
                            index=ref.index,
                            message=f"negative reference at call {position}",
                        )
                    )
    return out
