"""Action records: what the model chose to do at a step."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Union


@dataclass(frozen=True)
class ToolCall:
    """A structured tool invocation.

    ``raw`` keeps the original model-emitted form and ``call_id`` the wire id; neither
    takes part in equality so a corrected or re-parsed call compares by content.
    """

    tool_name: str
    arguments: dict[str, Any] = field(default_factory=dict)
    raw: Any = field(default=None, compare=False, repr=False)
    call_id: str | None = field(default=None, compare=False)
    parse_error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"type": "tool_call", "tool_name": self.tool_name, "arguments": self.arguments}
        if self.parse_error is not None:
            d["parse_error"] = self.parse_error
        return d


@dataclass(frozen=True)
class AnswerAction:
    """A final-answer attempt. ``well_formed`` is False when the answer could not be parsed."""

    text: str
    well_formed: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {"type": "answer", "text": self.text, "well_formed": self.well_formed}


Action = Union[ToolCall, AnswerAction]


def action_from_dict(d: dict[str, Any]) -> Action:
    kind = d.get("type")
    if kind == "tool_call":
        return ToolCall(d["tool_name"], dict(d.get("arguments") or {}), parse_error=d.get("parse_error"))
    if kind == "answer":
        return AnswerAction(d["text"], bool(d.get("well_formed", True)))
    raise ValueError(f"unknown action type: {kind!r}")
