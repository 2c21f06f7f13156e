"""Tool-using research agent with a bounded context operator, restartable episodes and answer verification."""

from dualloop.actions import AnswerAction, ToolCall
from dualloop.agent import EpisodeConfig, FinalAnswer, run_task
from dualloop.backend import CallbackBackend, ChatRequest, ChatResponse, OpenAIChatBackend, SamplingParams, ScriptedBackend
from dualloop.context import ContextPolicy, Step, TrajectoryLog, build_context, truncate_observation
from dualloop.errors import BackendError, ContractViolation, ScriptExhausted, UncorrectableToolCall
from dualloop.gateway import Blocklist, ToolGateway
from dualloop.pipeline import Pipeline

__version__ = "0.1.0"

__all__ = [
    "AnswerAction",
    "BackendError",
    "Blocklist",
    "CallbackBackend",
    "ChatRequest",
    "ChatResponse",
    "ContextPolicy",
    "ContractViolation",
    "EpisodeConfig",
    "FinalAnswer",
    "OpenAIChatBackend",
    "Pipeline",
    "SamplingParams",
    "ScriptExhausted",
    "ScriptedBackend",
    "Step",
    "ToolCall",
    "ToolGateway",
    "TrajectoryLog",
    "UncorrectableToolCall",
    "build_context",
    "run_task",
    "truncate_observation",
]
