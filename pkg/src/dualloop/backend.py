"""Chat-completion backends for the policy model.

Requests and responses use the common JSON chat wire format with
function-call message parts. Two implementations are provided: a live HTTP
client and a scripted test double that records every request it receives.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Protocol

from dualloop import prompts
from dualloop.actions import Action, AnswerAction, ToolCall
from dualloop.context import EffectiveContext, get_tokenizer
from dualloop.errors import BackendError, ContractViolation, ScriptExhausted

logger = logging.getLogger(__name__)

_ANSWER_TAG = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_BOXED = re.compile(r"\\boxed\{(.*)\}", re.DOTALL)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 1.0
    top_p: float = 0.95
    max_output_tokens: int = 16384
    context_limit: int = 262_144

    def __post_init__(self) -> None:
        if not 0.0 <= self.top_p <= 1.0:
            raise ContractViolation(f"top_p must be in [0, 1], got {self.top_p}")
        if self.max_output_tokens < 1:
            raise ContractViolation("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[dict[str, Any], ...]
    tools: tuple[dict[str, Any], ...] = ()
    sampling: SamplingParams = field(default_factory=SamplingParams)
    tokenizer: str = "bytes4"

    def to_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "messages": list(self.messages),
            "temperature": self.sampling.temperature,
            "top_p": self.sampling.top_p,
            "max_tokens": self.sampling.max_output_tokens,
        }
        if self.tools:
            payload["tools"] = list(self.tools)
        return payload

    def to_json(self) -> str:
        return json.dumps(self.to_payload(), ensure_ascii=False, sort_keys=True)

    def token_count(self) -> int:
        tok = get_tokenizer(self.tokenizer)
        n = 0
        for msg in self.messages:
            n += tok.count(msg.get("content") or "")
            for call in msg.get("tool_calls") or ():
                n += tok.count(call["function"]["name"]) + tok.count(call["function"]["arguments"])
        return n


@dataclass(frozen=True)
class ChatResponse:
    thought: str
    action: Action
    usage: dict[str, int] = field(default_factory=dict, compare=False)


# -- rendering ----------------------------------------------------------------


def tool_call_message_part(call: ToolCall, call_id: str) -> dict[str, Any]:
    return {
        "id": call_id,
        "type": "function",
        "function": {"name": call.tool_name, "arguments": json.dumps(call.arguments, ensure_ascii=False, sort_keys=True)},
    }


def render_context(
    ctx: EffectiveContext,
    system_prompt: str | None = None,
    format_note: str | None = None,
) -> list[dict[str, Any]]:
    """System instructions, then the query, then entries oldest-first."""
    system_prompt = prompts.load("system") if system_prompt is None else system_prompt
    format_note = prompts.load("format_correction") if format_note is None else format_note
    messages: list[dict[str, Any]] = [
        {"role": "system", "content": system_prompt},
        {"role": "user", "content": ctx.query},
    ]
    for entry in ctx.entries:
        if isinstance(entry.action, ToolCall):
            call_id = f"call_{entry.index}"
            messages.append(
                {"role": "assistant", "content": entry.thought, "tool_calls": [tool_call_message_part(entry.action, call_id)]}
            )
            obs = entry.rendered_observation()
            messages.append({"role": "tool", "tool_call_id": call_id, "content": obs if obs is not None else ""})
        else:
            body = entry.thought
            if entry.action.well_formed:
                body = f"{body}\n<answer>{entry.action.text}</answer>" if body else f"<answer>{entry.action.text}</answer>"
            else:
                body = "\n".join(p for p in (body, entry.action.text) if p)
            messages.append({"role": "assistant", "content": body})
            if not entry.action.well_formed:
                messages.append({"role": "user", "content": format_note})
    return messages


def render_response(resp: ChatResponse) -> dict[str, Any]:
    """Wire form of a response. Inverse of :func:`parse_message`."""
    msg: dict[str, Any] = {"role": "assistant", "reasoning_content": resp.thought}
    if isinstance(resp.action, ToolCall):
        msg["content"] = ""
        msg["tool_calls"] = [tool_call_message_part(resp.action, resp.action.call_id or "call_0")]
    elif resp.action.well_formed:
        msg["content"] = f"<answer>{resp.action.text}</answer>"
    else:
        msg["content"] = resp.action.text
    return msg


def _parse_tool_call(part: dict[str, Any]) -> ToolCall:
    if not isinstance(part, dict) or not isinstance(part.get("function") or {}, dict):
        return ToolCall("", {}, raw=part if isinstance(part, dict) else {"value": part}, parse_error="tool call is not a JSON object")
    fn = part.get("function") or {}
    name = str(fn.get("name") or "")
    raw_args = fn.get("arguments")
    if isinstance(raw_args, dict):
        return ToolCall(name, raw_args, raw=part, call_id=part.get("id"))
    try:
        args = json.loads(raw_args) if raw_args else {}
    except (TypeError, json.JSONDecodeError) as exc:
        return ToolCall(name, {}, raw=part, call_id=part.get("id"), parse_error=f"arguments are not valid JSON: {exc}")
    if not isinstance(args, dict):
        return ToolCall(name, {}, raw=part, call_id=part.get("id"), parse_error="arguments must be a JSON object")
    return ToolCall(name, args, raw=part, call_id=part.get("id"))


def parse_message(message: dict[str, Any]) -> ChatResponse:
    """Parse an assistant wire message into one thought and exactly one action.

    Anything that is not a JSON object becomes a malformed answer carrying its text.
    """
    if not isinstance(message, dict):
        text = message if isinstance(message, str) else json.dumps(message, ensure_ascii=False, default=str)
        return ChatResponse("", AnswerAction(text, well_formed=False))
    content = message.get("content") or ""
    if not isinstance(content, str):
        content = json.dumps(content, ensure_ascii=False, default=str)
    reasoning = message.get("reasoning_content")
    if reasoning is not None and not isinstance(reasoning, str):
        reasoning = str(reasoning)
    calls = message.get("tool_calls") or []
    if not isinstance(calls, list):
        calls = [calls]
    if calls:
        if len(calls) > 1:
            logger.info("response carried %d tool calls; keeping the first, dropping %d", len(calls), len(calls) - 1)
        thought = reasoning if reasoning is not None else content
        return ChatResponse(thought, _parse_tool_call(calls[0]))

    m = _ANSWER_TAG.search(content) or _BOXED.search(content)
    if m and m.group(1).strip():
        outside = (content[: m.start()] + content[m.end() :]).strip()
        thought = reasoning if reasoning is not None else outside
        return ChatResponse(thought, AnswerAction(m.group(1).strip()))
    if reasoning is not None:
        return ChatResponse(reasoning, AnswerAction(content, well_formed=False))
    return ChatResponse("", AnswerAction(content, well_formed=False))


# -- backends -----------------------------------------------------------------


class ModelBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


def check_context_limit(request: ChatRequest) -> None:
    n = request.token_count()
    if n > request.sampling.context_limit:
        raise ContractViolation(f"request is {n} tokens, over the context limit of {request.sampling.context_limit}")


class ScriptedBackend:
    """Returns canned responses in order and records each request verbatim.

    Items may be :class:`ChatResponse` objects or assistant wire messages; wire
    messages go through :func:`parse_message` exactly like live output.
    """

    def __init__(self, responses: Iterable[ChatResponse | dict[str, Any]]):
        self._queue = list(responses)
        if not self._queue:
            raise ContractViolation("scripted backend needs at least one response")
        self._pos = 0
        self.requests: list[ChatRequest] = []
        self.request_log: list[str] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        check_context_limit(request)
        self.requests.append(request)
        self.request_log.append(request.to_json())
        if self._pos >= len(self._queue):
            raise ScriptExhausted(f"scripted backend exhausted after {len(self._queue)} responses")
        item = self._queue[self._pos]
        self._pos += 1
        return item if isinstance(item, ChatResponse) else parse_message(item)

    @property
    def remaining(self) -> int:
        return len(self._queue) - self._pos


class CallbackBackend:
    """Computes each response from the request; for fixtures that react to observations."""

    def __init__(self, fn: Callable[[ChatRequest], ChatResponse | dict[str, Any]]):
        self._fn = fn
        self.requests: list[ChatRequest] = []
        self.request_log: list[str] = []

    def complete(self, request: ChatRequest) -> ChatResponse:
        check_context_limit(request)
        self.requests.append(request)
        self.request_log.append(request.to_json())
        out = self._fn(request)
        return out if isinstance(out, ChatResponse) else parse_message(out)


class OpenAIChatBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        retries: int = 3,
        base_delay: float = 0.5,
        timeout: float = 600.0,
        max_in_flight: int = 8,
        client=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import httpx

        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.retries = retries
        self.base_delay = base_delay
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(headers=headers, timeout=timeout)

    @classmethod
    def from_env(cls, prefix: str = "DUALLOOP", **overrides) -> "OpenAIChatBackend":
        url = overrides.pop("base_url", None) or os.environ.get(f"{prefix}_ENDPOINT")
        model = overrides.pop("model", None) or os.environ.get(f"{prefix}_MODEL")
        if not url or not model:
            raise ContractViolation(f"set {prefix}_ENDPOINT and {prefix}_MODEL (or configure the endpoint)")
        key = overrides.pop("api_key", None) or os.environ.get(f"{prefix}_API_KEY")
        return cls(url, model, key, **overrides)

    def complete(self, request: ChatRequest) -> ChatResponse:
        check_context_limit(request)
        payload = request.to_payload()
        payload["model"] = self.model
        delay = self.base_delay
        last_error: Exception | None = None
        with self._slots:
            for attempt in range(self.retries + 1):
                try:
                    resp = self._client.post(self.url, json=payload)
                    if resp.status_code >= 500 or resp.status_code == 429:
                        raise BackendError(f"HTTP {resp.status_code}")
                    resp.raise_for_status()
                    body = resp.json()
                    parsed = parse_message(body["choices"][0]["message"])
                    usage = body.get("usage") or {}
                    return ChatResponse(parsed.thought, parsed.action, {k: int(v) for k, v in usage.items() if isinstance(v, int)})
                except Exception as exc:  # transport, HTTP status or malformed body
                    last_error = exc
                    if attempt < self.retries:
                        logger.warning("chat completion failed (%s); retry %d in %.1fs", exc, attempt + 1, delay)
                        self._sleep(delay)
                        delay *= 2
        raise BackendError(f"chat completion failed after {self.retries + 1} attempts: {last_error}")
