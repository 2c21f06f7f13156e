"""Tool registry, contamination blocklist, retrieval/sandbox adapters and the dispatching gateway."""

from dualloop.actions import ToolCall
from dualloop.gateway.blocklist import BlockDecision, Blocklist, check_blocklist
from dualloop.gateway.core import DEFAULT_TOOLS, ToolGateway
from dualloop.gateway.registry import ParamSpec, Registry, ToolResult, ToolSpec, correct_tool_call, edit_distance
from dualloop.gateway.search import MockSearchBackend, SearchHit, SerperSearchBackend
from dualloop.gateway.transport import GuardedTransport, HttpxTransport, MockTransport, Response

__all__ = [
    "BlockDecision",
    "Blocklist",
    "DEFAULT_TOOLS",
    "GuardedTransport",
    "HttpxTransport",
    "MockSearchBackend",
    "MockTransport",
    "ParamSpec",
    "Registry",
    "Response",
    "SearchHit",
    "SerperSearchBackend",
    "ToolCall",
    "ToolGateway",
    "ToolResult",
    "ToolSpec",
    "check_blocklist",
    "correct_tool_call",
    "edit_distance",
]
