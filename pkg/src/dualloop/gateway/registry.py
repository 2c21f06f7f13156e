"""Tool declarations, results, and repair of malformed calls."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from dualloop.actions import ToolCall
from dualloop.errors import ContractViolation, UncorrectableToolCall

NAME_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
MAX_NAME_DISTANCE = 2

_JSON_TYPES = {"string": "string", "text": "string", "url": "string", "path": "string", "integer": "integer", "number": "number", "boolean": "boolean"}


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type: str = "string"
    required: bool = True
    description: str = ""


@dataclass(frozen=True)
class ToolSpec:
    name: str
    params: tuple[ParamSpec, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        if not NAME_PATTERN.match(self.name):
            raise ContractViolation(f"invalid tool name {self.name!r}")

    @property
    def param_names(self) -> set[str]:
        return {p.name for p in self.params}

    @property
    def required(self) -> list[str]:
        return [p.name for p in self.params if p.required]

    def declaration(self) -> dict[str, Any]:
        """Tool declaration in the chat protocol's function-calling format."""
        props = {}
        for p in self.params:
            prop: dict[str, Any] = {"type": _JSON_TYPES.get(p.type, "string")}
            if p.description:
                prop["description"] = p.description
            props[p.name] = prop
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {"type": "object", "properties": props, "required": self.required},
            },
        }


@dataclass
class ToolResult:
    tool_name: str
    output: str
    status: str = "ok"  # ok | error | blocked
    latency: float = 0.0
    metadata: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def error(cls, tool_name: str, message: str, **metadata) -> "ToolResult":
        return cls(tool_name, f"Error: {message}", "error", metadata=metadata)

    @classmethod
    def blocked(cls, tool_name: str, domain: str, **metadata) -> "ToolResult":
        return cls(tool_name, f"Blocked: access to {domain} is not permitted.", "blocked", metadata={"domain": domain, **metadata})


class Registry:
    def __init__(self, specs: Iterable[ToolSpec] = ()):
        self._specs: dict[str, ToolSpec] = {}
        for spec in specs:
            self.register(spec)

    def register(self, spec: ToolSpec) -> None:
        if spec.name in self._specs:
            raise ContractViolation(f"tool {spec.name!r} already registered")
        self._specs[spec.name] = spec

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def __getitem__(self, name: str) -> ToolSpec:
        return self._specs[name]

    def __iter__(self):
        return iter(self._specs.values())

    def __len__(self) -> int:
        return len(self._specs)

    def catalog(self) -> list[dict[str, Any]]:
        return [s.declaration() for s in self._specs.values()]


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance (insert, delete, substitute)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _resolve_name(name: str, specs: dict[str, ToolSpec]) -> str:
    if name in specs:
        return name
    # server-qualified names such as "search_server.google_search" or "tools/google_search"
    tail = re.split(r"[./:]", name)[-1]
    if tail and tail in specs:
        return tail
    close = [n for n in specs if edit_distance(name, n) <= MAX_NAME_DISTANCE]
    if len(close) == 1:
        return close[0]
    if not close:
        raise UncorrectableToolCall(f"unknown tool {name!r}; available tools: {', '.join(sorted(specs))}")
    raise UncorrectableToolCall(f"tool name {name!r} is ambiguous between {', '.join(sorted(close))}")


def correct_tool_call(call: ToolCall, registry: Registry | Sequence[ToolSpec]) -> ToolCall:
    """Map a possibly malformed call onto the registry, or raise UncorrectableToolCall.

    A name is repaired only to the single registered name within edit distance 2.
    A single unknown argument is renamed only when exactly one required
    parameter is still unbound.
    """
    specs = {s.name: s for s in registry}
    if not specs:
        raise ContractViolation("tool registry is empty")
    if call.parse_error:
        raise UncorrectableToolCall(f"could not parse call to {call.tool_name!r}: {call.parse_error}")
    name = _resolve_name(call.tool_name, specs)
    spec = specs[name]
    args = dict(call.arguments)
    unknown = [k for k in args if k not in spec.param_names]
    unbound = [p for p in spec.required if p not in args]
    if unknown:
        if len(unknown) == 1 and len(unbound) == 1:
            args[unbound[0]] = args.pop(unknown[0])
            unbound = []
        else:
            raise UncorrectableToolCall(
                f"{name} does not accept parameter(s) {', '.join(sorted(unknown))}; expected {', '.join(p.name for p in spec.params)}"
            )
    if unbound:
        raise UncorrectableToolCall(f"{name} is missing required parameter(s) {', '.join(unbound)}")
    if name == call.tool_name and args == call.arguments:
        return call
    return ToolCall(name, args, raw=call.raw if call.raw is not None else call.to_dict(), call_id=call.call_id)
