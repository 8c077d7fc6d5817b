"""Schema-constrained decoding over plan texts.

Compiles a tool registry into a deterministic character-level acceptor of
exactly the schema-valid plan texts (canonical whitespace-free form, tool and
argument names restricted to the registry). The automaton backs
next-character queries, vocabulary masks for token-level decoders, and a
greedy projection repair that maps arbitrary candidate text onto the accepted
language, the mechanism used to "enforce" outputs of models whose token
distributions are inaccessible.

States are immutable tuples; transitions are pure functions of
(state, character), so one automaton may serve many concurrent sessions.

Accepted value shapes per argument are deliberately relaxed around
references: both a bare ``"$$PREV[i]"`` and a singleton ``["$$PREV[i]"]``
are accepted at decode time for any argument; the type graph owns the
wrapping decision afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from .plan import PREV_REF_PATTERN
from .registry import Registry, ValueType

# Bounds keep the state space finite and guarantee repair termination.
MAX_STRING_CHARS = 512
MAX_NUMBER_DIGITS = 12
MAX_OBJECT_KEY_CHARS = 64

_PRINTABLE = frozenset(chr(c) for c in range(0x20, 0x7F))
_STRING_BODY = _PRINTABLE - {'"', "\\"}
_ESCAPES = frozenset('"\\/bfnrt')
_ESCAPES_ALL = _ESCAPES | {"u"}
_HEX = frozenset("0123456789abcdefABCDEF")
_DIGITS = frozenset("0123456789")
_DIGITS_NONZERO = frozenset("123456789")
_STRING_ALLOWED = _STRING_BODY | {'"', "\\"}

_PREV_LIT = '"$$PREV['

_CALL_HEAD = '"tool_name":"'
_CALL_MID = ',"arguments":['
_ARG_HEAD = '"argument_name":"'
_ARG_MID = ',"argument_value":'


class SchemaCompileError(ValueError):
    """The registry cannot be compiled into an automaton."""


class DecodeRejection(ValueError):
    """A character was fed that the automaton cannot accept."""

    def __init__(self, position: int, char: str, allowed: frozenset[str]):
        preview = "".join(sorted(allowed))[:40]
        super().__init__(f"rejected character {char!r} at position {position}; allowed: {preview!r}")
        self.position = position
        self.char = char
        self.allowed = allowed


# ---------------------------------------------------------------------------
# Value sub-machines. A value spec is a nested tuple; value states are nested
# tuples tagged by machine. ``None`` from _v_step means reject.
# ---------------------------------------------------------------------------

def _value_spec(vt: ValueType) -> tuple:
    if vt.kind == "primitive":
        return (vt.primitive,)
    if vt.kind == "object":
        return ("object",)
    return ("list", _element_spec(vt.element))


def _element_spec(vt: ValueType) -> tuple:
    inner = _value_spec(vt)
    if inner == ("string",):
        return inner  # strings already cover the reference pattern
    return ("union", (inner, ("prev",)))


def argument_value_spec(vt: ValueType) -> tuple:
    """Declared type, plus bare and singleton-array reference forms."""
    inner = _value_spec(vt)
    if inner[0] == "list":
        return ("union", (inner, ("prev",)))
    if inner == ("string",):
        return ("union", (inner, ("wrap",)))
    return ("union", (inner, ("prev",), ("wrap",)))


def _v_init(spec: tuple) -> tuple:
    kind = spec[0]
    if kind == "union":
        return ("u0",)
    if kind == "string":
        return ("s0",)
    if kind == "integer":
        return ("i0",)
    if kind == "uint":
        return ("ui0",)
    if kind == "float":
        return ("f0",)
    if kind == "boolean":
        return ("b", "")
    if kind == "object":
        return ("o0",)
    if kind == "list":
        return ("l0",)
    if kind == "prev":
        return ("p", 0)
    if kind == "wrap":
        return ("w0",)
    raise ValueError(f"unknown value spec {spec!r}")


def _v_step(spec: tuple, state: tuple, ch: str):  # noqa: C901 - one dispatcher
    kind = spec[0]

    if kind == "union":
        if state == ("u0",):
            for bi, branch in enumerate(spec[1]):
                nxt = _v_step(branch, _v_init(branch), ch)
                if nxt is not None:
                    return ("u", bi, nxt)
            return None
        _, bi, sub = state
        nxt = _v_step(spec[1][bi], sub, ch)
        return None if nxt is None else ("u", bi, nxt)

    if kind == "string":
        tag = state[0]
        if tag == "s0":
            return ("s", 0) if ch == '"' else None
        if tag == "s":
            n = state[1]
            if ch == '"':
                return ("sdone",)
            if n < MAX_STRING_CHARS:
                if ch == "\\":
                    return ("se", n)
                if ch in _STRING_BODY:
                    return ("s", n + 1)
            return None
        if tag == "se":
            n = state[1]
            if ch == "u":
                return ("su", n, 0)
            if ch in _ESCAPES:
                return ("s", n + 1)
            return None
        if tag == "su":
            n, k = state[1], state[2]
            if ch in _HEX:
                return ("s", n + 1) if k == 3 else ("su", n, k + 1)
            return None
        return None  # sdone

    if kind in ("integer", "uint"):
        tag = state[0]
        if tag in ("i0", "ui0"):
            if kind == "integer" and ch == "-":
                return ("ineg",)
            if ch == "0":
                return ("iz",)
            if ch in _DIGITS_NONZERO:
                return ("id", 1)
            return None
        if tag == "ineg":
            if ch == "0":
                return ("iz",)
            if ch in _DIGITS_NONZERO:
                return ("id", 1)
            return None
        if tag == "id":
            n = state[1]
            if ch in _DIGITS and n < MAX_NUMBER_DIGITS:
                return ("id", n + 1)
            return None
        return None  # iz

    if kind == "float":
        tag = state[0]
        if tag == "f0":
            if ch == "-":
                return ("fneg",)
            if ch == "0":
                return ("fz",)
            if ch in _DIGITS_NONZERO:
                return ("fi", 1)
            return None
        if tag == "fneg":
            if ch == "0":
                return ("fz",)
            if ch in _DIGITS_NONZERO:
                return ("fi", 1)
            return None
        if tag == "fz":
            return ("fdot",) if ch == "." else None
        if tag == "fi":
            n = state[1]
            if ch in _DIGITS and n < MAX_NUMBER_DIGITS:
                return ("fi", n + 1)
            if ch == ".":
                return ("fdot",)
            return None
        if tag == "fdot":
            return ("ff", 1) if ch in _DIGITS else None
        if tag == "ff":
            n = state[1]
            if ch in _DIGITS and n < MAX_NUMBER_DIGITS:
                return ("ff", n + 1)
            return None
        return None

    if kind == "boolean":
        prefix = state[1]
        for lit in ("true", "false"):
            if lit.startswith(prefix) and len(prefix) < len(lit) and lit[len(prefix)] == ch:
                return ("b", prefix + ch)
        return None

    if kind == "prev":
        tag = state[0]
        if tag == "p":
            i = state[1]
            if ch == _PREV_LIT[i]:
                return ("pd", 0) if i == len(_PREV_LIT) - 1 else ("p", i + 1)
            return None
        if tag == "pd":
            n = state[1]
            if ch in _DIGITS and n < MAX_NUMBER_DIGITS:
                return ("pd", n + 1)
            if ch == "]" and n >= 1:
                return ("pq",)
            return None
        if tag == "pq":
            return ("pdone",) if ch == '"' else None
        return None  # pdone

    if kind == "wrap":
        tag = state[0]
        if tag == "w0":
            return ("wp", ("p", 0)) if ch == "[" else None
        if tag == "wp":
            sub = state[1]
            nxt = _v_step(("prev",), sub, ch)
            if nxt is not None:
                return ("wp", nxt)
            if _v_done(("prev",), sub) and ch == "]":
                return ("wdone",)
            return None
        return None  # wdone

    if kind == "object":
        tag = state[0]
        if tag == "o0":
            return ("of",) if ch == "{" else None
        if tag == "of":
            if ch == "}":
                return ("odone",)
            if ch == '"':
                return ("ok", 0)
            return None
        if tag == "ok":
            n = state[1]
            if ch == '"':
                return ("oc",)
            if ch in _STRING_BODY and n < MAX_OBJECT_KEY_CHARS:
                return ("ok", n + 1)
            return None
        if tag == "oc":
            return ("om0",) if ch == ":" else None
        if tag == "om0":
            if ch == '"':
                return ("om", "s", ("s", 0))
            if ch == "-" or ch in _DIGITS:
                nxt = _v_step(("float",), ("f0",), ch)
                return None if nxt is None else ("om", "f", nxt)
            if ch in "tf":
                return ("om", "b", ("b", ch))
            if ch == "n":
                return ("om", "n", 1)
            return None
        if tag == "om":
            mk, sub = state[1], state[2]
            if mk == "n":
                if sub < 4 and ch == "null"[sub]:
                    return ("om", "n", sub + 1)
                nxt = None
                done = sub == 4
            else:
                mspec = {"s": ("string",), "f": ("float",), "b": ("boolean",)}[mk]
                nxt = _v_step(mspec, sub, ch)
                done = _v_done(mspec, sub)
            if nxt is not None:
                return ("om", mk, nxt)
            if done:
                if ch == ",":
                    return ("onk",)
                if ch == "}":
                    return ("odone",)
            return None
        if tag == "onk":
            return ("ok", 0) if ch == '"' else None
        return None  # odone

    if kind == "list":
        espec = spec[1]
        tag = state[0]
        if tag == "l0":
            return ("lf",) if ch == "[" else None
        if tag == "lf":
            if ch == "]":
                return ("ldone",)
            nxt = _v_step(espec, _v_init(espec), ch)
            return None if nxt is None else ("le", nxt)
        if tag == "le":
            sub = state[1]
            nxt = _v_step(espec, sub, ch)
            if nxt is not None:
                return ("le", nxt)
            if _v_done(espec, sub):
                if ch == ",":
                    return ("ln",)
                if ch == "]":
                    return ("ldone",)
            return None
        if tag == "ln":
            nxt = _v_step(espec, _v_init(espec), ch)
            return None if nxt is None else ("le", nxt)
        return None  # ldone

    raise ValueError(f"unknown value spec {spec!r}")


def _v_done(spec: tuple, state: tuple) -> bool:
    kind = spec[0]
    if kind == "union":
        return state != ("u0",) and _v_done(spec[1][state[1]], state[2])
    if kind == "string":
        return state == ("sdone",)
    if kind in ("integer", "uint"):
        return state[0] in ("iz", "id")
    if kind == "float":
        return state[0] in ("fz", "fi", "ff")
    if kind == "boolean":
        return state[1] in ("true", "false")
    if kind == "prev":
        return state == ("pdone",)
    if kind == "wrap":
        return state == ("wdone",)
    if kind == "object":
        return state == ("odone",)
    if kind == "list":
        return state == ("ldone",)
    raise ValueError(f"unknown value spec {spec!r}")


@lru_cache(maxsize=65536)
def _v_allowed(spec: tuple, state: tuple) -> frozenset[str]:  # noqa: C901
    kind = spec[0]

    if kind == "union":
        if state == ("u0",):
            out: frozenset[str] = frozenset()
            for branch in spec[1]:
                out = out | _v_allowed(branch, _v_init(branch))
            return out
        return _v_allowed(spec[1][state[1]], state[2])

    if kind == "string":
        tag = state[0]
        if tag == "s0":
            return frozenset('"')
        if tag == "s":
            return frozenset('"') if state[1] >= MAX_STRING_CHARS else _STRING_ALLOWED
        if tag == "se":
            return _ESCAPES_ALL
        if tag == "su":
            return _HEX
        return frozenset()

    if kind in ("integer", "uint"):
        tag = state[0]
        if tag == "i0":
            return _DIGITS | {"-"}
        if tag == "ui0":
            return _DIGITS
        if tag == "ineg":
            return _DIGITS
        if tag == "id":
            return _DIGITS if state[1] < MAX_NUMBER_DIGITS else frozenset()
        return frozenset()

    if kind == "float":
        tag = state[0]
        if tag == "f0":
            return _DIGITS | {"-"}
        if tag == "fneg":
            return _DIGITS
        if tag == "fz":
            return frozenset(".")
        if tag == "fi":
            base = frozenset(".")
            return base | _DIGITS if state[1] < MAX_NUMBER_DIGITS else base
        if tag == "fdot":
            return _DIGITS
        if tag == "ff":
            return _DIGITS if state[1] < MAX_NUMBER_DIGITS else frozenset()
        return frozenset()

    if kind == "boolean":
        prefix = state[1]
        out = set()
        for lit in ("true", "false"):
            if lit.startswith(prefix) and len(prefix) < len(lit):
                out.add(lit[len(prefix)])
        return frozenset(out)

    if kind == "prev":
        tag = state[0]
        if tag == "p":
            return frozenset(_PREV_LIT[state[1]])
        if tag == "pd":
            n = state[1]
            out = _DIGITS if n < MAX_NUMBER_DIGITS else frozenset()
            if n >= 1:
                out = out | {"]"}
            return out
        if tag == "pq":
            return frozenset('"')
        return frozenset()

    if kind == "wrap":
        tag = state[0]
        if tag == "w0":
            return frozenset("[")
        if tag == "wp":
            sub = state[1]
            out = _v_allowed(("prev",), sub)
            if _v_done(("prev",), sub):
                out = out | {"]"}
            return out
        return frozenset()

    if kind == "object":
        tag = state[0]
        if tag == "o0":
            return frozenset("{")
        if tag == "of":
            return frozenset('}"')
        if tag == "ok":
            return frozenset('"') | (_STRING_BODY if state[1] < MAX_OBJECT_KEY_CHARS else frozenset())
        if tag == "oc":
            return frozenset(":")
        if tag == "om0":
            return frozenset('"tfn-') | _DIGITS
        if tag == "om":
            mk, sub = state[1], state[2]
            if mk == "n":
                out = frozenset("null"[sub]) if sub < 4 else frozenset()
                done = sub == 4
            else:
                mspec = {"s": ("string",), "f": ("float",), "b": ("boolean",)}[mk]
                out = _v_allowed(mspec, sub)
                done = _v_done(mspec, sub)
            if done:
                out = out | {",", "}"}
            return out
        if tag == "onk":
            return frozenset('"')
        return frozenset()

    if kind == "list":
        espec = spec[1]
        tag = state[0]
        if tag == "l0":
            return frozenset("[")
        if tag == "lf":
            return frozenset("]") | _v_allowed(espec, _v_init(espec))
        if tag == "le":
            sub = state[1]
            out = _v_allowed(espec, sub)
            if _v_done(espec, sub):
                out = out | {",", "]"}
            return out
        if tag == "ln":
            return _v_allowed(espec, _v_init(espec))
        return frozenset()

    raise ValueError(f"unknown value spec {spec!r}")


# ---------------------------------------------------------------------------
# Plan automaton
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanSchema:
    registry_version: str
    tool_name_enum: tuple[str, ...]
    arguments_by_tool: dict[str, tuple[str, ...]]
    prev_ref_pattern: str = PREV_REF_PATTERN.pattern


class PlanAutomaton:
    """Deterministic character acceptor for schema-valid plan texts."""

    initial_state = ("start",)

    def __init__(self, registry: Registry):
        if not registry.tools:
            raise SchemaCompileError("cannot compile a schema for an empty registry")
        self.registry_version = registry.version
        self._tool_names = tuple(registry.tools)
        self._tool_set = frozenset(self._tool_names)
        self._args = {name: spec.argument_names for name, spec in registry.tools.items()}
        self._arg_specs = {
            (name, arg.name): argument_value_spec(arg.value_type)
            for name, spec in registry.tools.items()
            for arg in spec.arguments
        }
        self.schema = PlanSchema(
            registry_version=registry.version,
            tool_name_enum=self._tool_names,
            arguments_by_tool=dict(self._args),
        )

    def accepting(self, state: tuple) -> bool:
        return state == ("accept",)

    def transition(self, state: tuple, ch: str):  # noqa: C901 - one dispatcher
        tag = state[0]
        if tag == "start":
            return ("plan_open",) if ch == "[" else None
        if tag == "plan_open":
            if ch == "]":
                return ("accept",)
            if ch == "{":
                return ("chead", 0)
            return None
        if tag == "call_open":
            return ("chead", 0) if ch == "{" else None
        if tag == "chead":
            i = state[1]
            if ch == _CALL_HEAD[i]:
                return ("tool", "") if i == len(_CALL_HEAD) - 1 else ("chead", i + 1)
            return None
        if tag == "tool":
            prefix = state[1]
            if ch == '"' and prefix in self._tool_set:
                return ("cmid", prefix, 0)
            cand = prefix + ch
            if any(t.startswith(cand) for t in self._tool_names):
                return ("tool", cand)
            return None
        if tag == "cmid":
            tool, i = state[1], state[2]
            if ch == _CALL_MID[i]:
                return ("args_open", tool) if i == len(_CALL_MID) - 1 else ("cmid", tool, i + 1)
            return None
        if tag == "args_open":
            tool = state[1]
            if ch == "]":
                return ("call_tail",)
            if ch == "{" and self._args[tool]:
                return ("ahead", tool, frozenset(), 0)
            return None
        if tag == "ahead":
            tool, used, i = state[1], state[2], state[3]
            if ch == _ARG_HEAD[i]:
                return ("aname", tool, used, "") if i == len(_ARG_HEAD) - 1 else ("ahead", tool, used, i + 1)
            return None
        if tag == "aname":
            tool, used, prefix = state[1], state[2], state[3]
            unused = [a for a in self._args[tool] if a not in used]
            if ch == '"' and prefix in unused:
                return ("amid", tool, prefix, used, 0)
            cand = prefix + ch
            if any(a.startswith(cand) for a in unused):
                return ("aname", tool, used, cand)
            return None
        if tag == "amid":
            tool, arg, used, i = state[1], state[2], state[3], state[4]
            if ch == _ARG_MID[i]:
                if i == len(_ARG_MID) - 1:
                    spec = self._arg_specs[(tool, arg)]
                    return ("value", tool, arg, used, _v_init(spec))
                return ("amid", tool, arg, used, i + 1)
            return None
        if tag == "value":
            tool, arg, used, vstate = state[1], state[2], state[3], state[4]
            spec = self._arg_specs[(tool, arg)]
            nxt = _v_step(spec, vstate, ch)
            if nxt is not None:
                return ("value", tool, arg, used, nxt)
            if _v_done(spec, vstate) and ch == "}":
                return ("arg_sep", tool, used | {arg})
            return None
        if tag == "arg_sep":
            tool, used = state[1], state[2]
            if ch == "]":
                return ("call_tail",)
            if ch == "," and len(used) < len(self._args[tool]):
                return ("arg_open", tool, used)
            return None
        if tag == "arg_open":
            return ("ahead", state[1], state[2], 0) if ch == "{" else None
        if tag == "call_tail":
            return ("plan_sep",) if ch == "}" else None
        if tag == "plan_sep":
            if ch == ",":
                return ("call_open",)
            if ch == "]":
                return ("accept",)
            return None
        return None  # accept

    def allowed(self, state: tuple) -> frozenset[str]:  # noqa: C901
        tag = state[0]
        if tag == "start":
            return frozenset("[")
        if tag == "plan_open":
            return frozenset("]{")
        if tag == "call_open":
            return frozenset("{")
        if tag == "chead":
            return frozenset(_CALL_HEAD[state[1]])
        if tag == "tool":
            prefix = state[1]
            out = {t[len(prefix)] for t in self._tool_names
                   if t.startswith(prefix) and len(t) > len(prefix)}
            if prefix in self._tool_set:
                out.add('"')
            return frozenset(out)
        if tag == "cmid":
            return frozenset(_CALL_MID[state[2]])
        if tag == "args_open":
            return frozenset("]{") if self._args[state[1]] else frozenset("]")
        if tag == "ahead":
            return frozenset(_ARG_HEAD[state[3]])
        if tag == "aname":
            tool, used, prefix = state[1], state[2], state[3]
            unused = [a for a in self._args[tool] if a not in used]
            out = {a[len(prefix)] for a in unused
                   if a.startswith(prefix) and len(a) > len(prefix)}
            if prefix in unused:
                out.add('"')
            return frozenset(out)
        if tag == "amid":
            return frozenset(_ARG_MID[state[4]])
        if tag == "value":
            tool, arg, _, vstate = state[1], state[2], state[3], state[4]
            spec = self._arg_specs[(tool, arg)]
            out = _v_allowed(spec, vstate)
            if _v_done(spec, vstate):
                out = out | {"}"}
            return out
        if tag == "arg_sep":
            tool, used = state[1], state[2]
            if len(used) < len(self._args[tool]):
                return frozenset("],")
            return frozenset("]")
        if tag == "arg_open":
            return frozenset("{")
        if tag == "call_tail":
            return frozenset("}")
        if tag == "plan_sep":
            return frozenset(",]")
        return frozenset()  # accept


def compile_schema(registry: Registry) -> PlanAutomaton:
    return PlanAutomaton(registry)


# ---------------------------------------------------------------------------
# Sub-task automaton: [{"id": n, "thought": str, "tool_name": enum}]
# ---------------------------------------------------------------------------

_ST_HEAD = '"id":'
_ST_MID = ',"thought":'
_ST_TAIL = ',"tool_name":"'


class SubTaskAutomaton:
    """Acceptor for decomposition output with tool names pinned to an enum."""

    initial_state = ("start",)

    def __init__(self, tool_names):
        names = tuple(tool_names)
        if not names:
            raise SchemaCompileError("sub-task schema needs at least one tool name")
        self._tool_names = names
        self._tool_set = frozenset(names)

    def accepting(self, state: tuple) -> bool:
        return state == ("accept",)

    def transition(self, state: tuple, ch: str):  # noqa: C901
        tag = state[0]
        if tag == "start":
            return ("first",) if ch == "[" else None
        if tag == "first":
            if ch == "]":
                return ("accept",)
            if ch == "{":
                return ("hlit", 0)
            return None
        if tag == "item_open":
            return ("hlit", 0) if ch == "{" else None
        if tag == "hlit":
            i = state[1]
            if ch == _ST_HEAD[i]:
                return ("idval", ("ui0",)) if i == len(_ST_HEAD) - 1 else ("hlit", i + 1)
            return None
        if tag == "idval":
            sub = state[1]
            nxt = _v_step(("uint",), sub, ch)
            if nxt is not None:
                return ("idval", nxt)
            if _v_done(("uint",), sub) and ch == _ST_MID[0]:
                return ("tlit", 1)
            return None
        if tag == "tlit":
            i = state[1]
            if ch == _ST_MID[i]:
                return ("tstr", ("s0",)) if i == len(_ST_MID) - 1 else ("tlit", i + 1)
            return None
        if tag == "tstr":
            sub = state[1]
            nxt = _v_step(("string",), sub, ch)
            if nxt is not None:
                return ("tstr", nxt)
            if _v_done(("string",), sub) and ch == _ST_TAIL[0]:
                return ("nlit", 1)
            return None
        if tag == "nlit":
            i = state[1]
            if ch == _ST_TAIL[i]:
                return ("tname", "") if i == len(_ST_TAIL) - 1 else ("nlit", i + 1)
            return None
        if tag == "tname":
            prefix = state[1]
            if ch == '"' and prefix in self._tool_set:
                return ("item_close",)
            cand = prefix + ch
            if any(t.startswith(cand) for t in self._tool_names):
                return ("tname", cand)
            return None
        if tag == "item_close":
            return ("item_sep",) if ch == "}" else None
        if tag == "item_sep":
            if ch == ",":
                return ("item_open",)
            if ch == "]":
                return ("accept",)
            return None
        return None

    def allowed(self, state: tuple) -> frozenset[str]:
        tag = state[0]
        if tag == "start":
            return frozenset("[")
        if tag == "first":
            return frozenset("]{")
        if tag == "item_open":
            return frozenset("{")
        if tag == "hlit":
            return frozenset(_ST_HEAD[state[1]])
        if tag == "idval":
            sub = state[1]
            out = _v_allowed(("uint",), sub)
            if _v_done(("uint",), sub):
                out = out | {_ST_MID[0]}
            return out
        if tag == "tlit":
            return frozenset(_ST_MID[state[1]])
        if tag == "tstr":
            sub = state[1]
            out = _v_allowed(("string",), sub)
            if _v_done(("string",), sub):
                out = out | {_ST_TAIL[0]}
            return out
        if tag == "nlit":
            return frozenset(_ST_TAIL[state[1]])
        if tag == "tname":
            prefix = state[1]
            out = {t[len(prefix)] for t in self._tool_names
                   if t.startswith(prefix) and len(t) > len(prefix)}
            if prefix in self._tool_set:
                out.add('"')
            return frozenset(out)
        if tag == "item_close":
            return frozenset("}")
        if tag == "item_sep":
            return frozenset(",]")
        return frozenset()


def compile_subtask_schema(tool_names) -> SubTaskAutomaton:
    return SubTaskAutomaton(tool_names)


# ---------------------------------------------------------------------------
# Decode sessions and greedy projection repair
# ---------------------------------------------------------------------------

class DecoderSession:
    """Single decode stream over a shared automaton.

    The emitted buffer is always a prefix of some accepted string; ``advance``
    is atomic and leaves the session untouched on rejection.
    """

    def __init__(self, automaton):
        self.automaton = automaton
        self.state = automaton.initial_state
        self.emitted = ""

    @property
    def at_end(self) -> bool:
        return self.automaton.accepting(self.state)

    def allowed_next(self) -> tuple[frozenset[str], bool]:
        """(allowed characters, end-of-text flag)."""
        return self.automaton.allowed(self.state), self.at_end

    def advance(self, text: str) -> "DecoderSession":
        state = self.state
        for k, ch in enumerate(text):
            nxt = self.automaton.transition(state, ch)
            if nxt is None:
                raise DecodeRejection(len(self.emitted) + k, ch, self.automaton.allowed(state))
            state = nxt
        self.state = state
        self.emitted += text
        return self

    def peek(self, text: str) -> bool:
        """Whether the whole token could be consumed from the current state."""
        state = self.state
        for ch in text:
            state = self.automaton.transition(state, ch)
            if state is None:
                return False
        return True

    def mask_vocabulary(self, vocabulary: list[str]) -> list[bool]:
        """Speculative per-token mask; the session state is unchanged."""
        return [self.peek(token) for token in vocabulary]

    def copy(self) -> "DecoderSession":
        dup = DecoderSession(self.automaton)
        dup.state = self.state
        dup.emitted = self.emitted
        return dup


@dataclass(frozen=True)
class Edit:
    kind: str  # "skip" | "insert" | "truncate"
    position: int  # index into the candidate text
    text: str


_REPAIR_LOOKAHEAD = 16
_INSERT_PRIORITY = ']}",:{['


def _priority_char(allowed: frozenset[str]) -> str:
    for ch in _INSERT_PRIORITY:
        if ch in allowed:
            return ch
    digits = sorted(allowed & _DIGITS)
    if digits:
        return digits[0]
    return min(allowed)


def enforced_repair(automaton, candidate: str) -> tuple[str, list[Edit]]:
    """Greedy projection of arbitrary text onto the accepted language.

    Identity on accepted inputs. Otherwise, per automaton state: consume the
    current character when allowed; else emit the forced character when only
    one is allowed; else skip ahead to the nearest allowed character within a
    16-character window; else insert by fixed priority (structural closers
    first, then openers, then digits, then the smallest allowed character).
    Once the automaton accepts, any unconsumed suffix is dropped. Always
    terminates with accepted text; idempotent.
    """
    state = automaton.initial_state
    out: list[str] = []
    edits: list[Edit] = []
    i = 0
    n = len(candidate)
    while not automaton.accepting(state):
        allowed = automaton.allowed(state)
        if i < n:
            ch = candidate[i]
            if ch in allowed:
                state = automaton.transition(state, ch)
                out.append(ch)
                i += 1
                continue
            if len(allowed) == 1:
                forced = next(iter(allowed))
                state = automaton.transition(state, forced)
                out.append(forced)
                edits.append(Edit("insert", i, forced))
                continue
            window = candidate[i + 1 : i + 1 + _REPAIR_LOOKAHEAD]
            jump = next((j for j, c in enumerate(window) if c in allowed), None)
            if jump is not None:
                skipped = candidate[i : i + 1 + jump]
                edits.append(Edit("skip", i, skipped))
                i += 1 + jump
                ch = candidate[i]
                state = automaton.transition(state, ch)
                out.append(ch)
                i += 1
                continue
            pick = _priority_char(allowed)
            state = automaton.transition(state, pick)
            out.append(pick)
            edits.append(Edit("insert", i, pick))
        else:
            pick = next(iter(allowed)) if len(allowed) == 1 else _priority_char(allowed)
            state = automaton.transition(state, pick)
            out.append(pick)
            edits.append(Edit("insert", i, pick))
    if i < n:
        edits.append(Edit("truncate", i, candidate[i:]))
    return "".join(out), edits
