"""Directed tool-compatibility graph and ``$$PREV`` wrapping repair.

An edge of weight 1 from tool A to argument g of tool B means A's return type
equals g's type exactly; weight 2 means g is list-typed and A's return type
equals its element type. At most one edge can exist per (A, B, g) triple
because a type never equals a list of itself.
"""

from __future__ import annotations

from dataclasses import dataclass

from .plan import ArgValue, ListOf, Plan, PrevRef
from .registry import Registry

COMPATIBLE = "compatible"
INCOMPATIBLE = "incompatible"
NOT_A_PREV_REF = "not_a_prev_ref"


@dataclass(frozen=True)
class TypeEdge:
    from_tool: str
    to_tool: str
    to_argument: str
    weight: int  # 1 = direct, 2 = list-wrapped


class TypeGraph:
    """Immutable after build; check/repair are pure and safe to share."""

    def __init__(self, registry_version: str, tool_names, edges):
        self.registry_version = registry_version
        self.tool_names = frozenset(tool_names)
        self.edges = frozenset(edges)
        self._weights = {(e.from_tool, e.to_tool, e.to_argument): e.weight for e in self.edges}

    def edge_weight(self, from_tool: str, to_tool: str, argument: str) -> int | None:
        return self._weights.get((from_tool, to_tool, argument))

    def dump(self) -> list[dict]:
        rows = [
            {"from": e.from_tool, "to": e.to_tool, "argument": e.to_argument, "weight": e.weight}
            for e in self.edges
        ]
        rows.sort(key=lambda r: (r["from"], r["to"], r["argument"]))
        return rows


def build_graph(registry: Registry) -> TypeGraph:
    """Edge (A, B, g) with weight 1 iff returns(A) = type(g), weight 2 iff
    type(g) = list of returns(A); no edge otherwise. Ordered pairs include
    A = B since a tool may feed a later call of itself."""
    edges: list[TypeEdge] = []
    specs = list(registry.tools.values())
    for src in specs:
        for dst in specs:
            for arg in dst.arguments:
                if arg.value_type == src.returns:
                    edges.append(TypeEdge(src.name, dst.name, arg.name, 1))
                elif arg.value_type.is_list and arg.value_type.element == src.returns:
                    edges.append(TypeEdge(src.name, dst.name, arg.name, 2))
    return TypeGraph(registry.version, registry.names, edges)


@dataclass(frozen=True)
class CheckResult:
    status: str  # COMPATIBLE | INCOMPATIBLE | NOT_A_PREV_REF
    weight: int | None = None
    wrapping_mismatch: bool = False
    note: str | None = None

    @property
    def compatible(self) -> bool:
        return self.status == COMPATIBLE


def _edge_for(graph: TypeGraph, plan: Plan, position: int, ref: PrevRef, argument: str) -> tuple[int | None, str | None]:
    """(weight, error) for the edge feeding ``ref`` into the call's argument."""
    if not 0 <= ref.index < position:
        return None, f"reference $$PREV[{ref.index}] does not point strictly backwards"
    to_tool = plan.calls[position].tool_name
    from_tool = plan.calls[ref.index].tool_name
    if from_tool not in graph.tool_names or to_tool not in graph.tool_names:
        return None, "unknown tool"
    weight = graph.edge_weight(from_tool, to_tool, argument)
    if weight is None:
        return None, f"no type edge {from_tool} -> {to_tool}.{argument}"
    return weight, None


def check_ref(graph: TypeGraph, plan: Plan, position: int, argument: str) -> CheckResult:
    """Check the reference held by one argument of one call.

    Compatible with matching wrapping when a bare value sits on a weight-1
    edge or an array-wrapped value on a weight-2 edge; compatible with a
    wrapping-mismatch note when the edge exists but the wrapping disagrees.
    """
    value = plan.calls[position].argument(argument)
    if value is None:
        return CheckResult(status=NOT_A_PREV_REF, note=f"no argument {argument!r} on call {position}")

    if isinstance(value, PrevRef):
        weight, error = _edge_for(graph, plan, position, value, argument)
        if weight is None:
            return CheckResult(status=INCOMPATIBLE, note=error)
        if weight == 1:
            return CheckResult(status=COMPATIBLE, weight=1)
        return CheckResult(status=COMPATIBLE, weight=2, wrapping_mismatch=True,
                           note="bare value where array required")

    if isinstance(value, ListOf):
        refs = [item for item in value.elements if isinstance(item, PrevRef)]
        if not refs:
            return CheckResult(status=NOT_A_PREV_REF)
        if len(value.elements) == 1 and len(refs) == 1:
            weight, error = _edge_for(graph, plan, position, refs[0], argument)
            if weight is None:
                return CheckResult(status=INCOMPATIBLE, note=error)
            if weight == 2:
                return CheckResult(status=COMPATIBLE, weight=2)
            return CheckResult(status=COMPATIBLE, weight=1, wrapping_mismatch=True,
                               note="array where bare value required")
        # Multi-element arrays: each referenced element needs its own
        # weight-2 edge; unwrapping would drop siblings.
        for ref in refs:
            weight, error = _edge_for(graph, plan, position, ref, argument)
            if weight != 2:
                return CheckResult(status=INCOMPATIBLE,
                                   note=error or "array element without a list-wrapped edge")
        return CheckResult(status=COMPATIBLE, weight=2)

    return CheckResult(status=NOT_A_PREV_REF)


@dataclass(frozen=True)
class Repair:
    position: int
    argument: str
    action: str  # "wrapped" | "unwrapped" | "unrepaired"
    detail: str


def _repair_value(graph: TypeGraph, plan: Plan, position: int, argument: str,
                  value: ArgValue, repairs: list[Repair]) -> ArgValue:
    tool = plan.calls[position].tool_name

    if isinstance(value, PrevRef):
        weight, error = _edge_for(graph, plan, position, value, argument)
        if weight is None:
            repairs.append(Repair(position, argument, "unrepaired", error or "no edge"))
            return value
        if weight == 2:
            repairs.append(Repair(position, argument, "wrapped",
                                  f"$$PREV[{value.index}] wrapped into array for {tool}.{argument}"))
            return ListOf((value,))
        return value

    if isinstance(value, ListOf):
        refs = [item for item in value.elements if isinstance(item, PrevRef)]
        if not refs:
            return value
        if len(value.elements) == 1 and len(refs) == 1:
            ref = refs[0]
            weight, error = _edge_for(graph, plan, position, ref, argument)
            if weight is None:
                repairs.append(Repair(position, argument, "unrepaired", error or "no edge"))
                return value
            if weight == 1:
                repairs.append(Repair(position, argument, "unwrapped",
                                      f"[$$PREV[{ref.index}]] unwrapped to bare value for {tool}.{argument}"))
                return ref
            return value
        for ref in refs:
            weight, error = _edge_for(graph, plan, position, ref, argument)
            if weight != 2:
                repairs.append(Repair(position, argument, "unrepaired",
                                      error or "array element without a list-wrapped edge"))
        return value

    return value


def repair_plan(graph: TypeGraph, plan: Plan) -> tuple[Plan, list[Repair]]:
    """Re-wrap every referenced value to match its edge weight.

    The tool sequence, tool names and all non-reference values are left
    unchanged; incompatible references stay untouched and are reported as
    unrepaired. Idempotent: repairing a repaired plan changes nothing.
    """
    repairs: list[Repair] = []
    calls: list = []
    for position, call in enumerate(plan.calls):
        new_args = tuple(
            (name, _repair_value(graph, plan, position, name, value, repairs))
            for name, value in call.arguments
        )
        calls.append(type(call)(tool_name=call.tool_name, arguments=new_args))
    return Plan(calls=tuple(calls)), repairs
