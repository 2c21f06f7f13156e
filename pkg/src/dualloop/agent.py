"""The dual-loop agent: a step loop inside an episode loop with clean-slate restarts."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Protocol

from dualloop import prompts
from dualloop.actions import AnswerAction, ToolCall
from dualloop.backend import ChatRequest, ModelBackend, SamplingParams, render_context
from dualloop.context import ContextPolicy, Step, TrajectoryLog, append_step, build_context, log_records
from dualloop.errors import BackendError, ContractViolation

logger = logging.getLogger(__name__)

IN_PROGRESS = "in_progress"
ANSWERED = "answered"
TURN_BUDGET_EXHAUSTED = "turn_budget_exhausted"
FORMAT_ERROR = "format_error"
# backend unreachable after retries, or the request no longer fits the context limit
FAILED = "failed"

MODEL_FINAL = "model_final"
FALLBACK_EXTRACTED = "fallback_extracted"
NO_ANSWER = "[no answer]"


@dataclass(frozen=True)
class EpisodeConfig:
    max_turns: int = 200
    max_retries: int = 5
    context_policy: ContextPolicy = field(default_factory=ContextPolicy)
    sampling: SamplingParams = field(default_factory=SamplingParams)
    format_error_limit: int = 3
    step_retries: int = 2
    system_prompt: str | None = None

    def __post_init__(self) -> None:
        if self.max_turns < 1:
            raise ContractViolation(f"max_turns must be >= 1, got {self.max_turns}")
        if self.max_retries < 1:
            raise ContractViolation(f"max_retries must be >= 1, got {self.max_retries}")


@dataclass(frozen=True)
class RunState:
    query: str
    episode: int
    log: TrajectoryLog
    status: str = IN_PROGRESS
    malformed_streak: int = 0

    @classmethod
    def fresh(cls, query: str, episode: int) -> "RunState":
        return cls(query, episode, TrajectoryLog(episode, query))

    @property
    def answer(self) -> str | None:
        if self.status == ANSWERED:
            return self.log.steps[-1].action.text
        return None


@dataclass(frozen=True)
class FinalAnswer:
    text: str
    source: str
    episode: int
    total_steps: int
    completeness: float | None = None
    logs: tuple[TrajectoryLog, ...] = field(default=(), compare=False, repr=False)

    def summary_record(self) -> dict[str, Any]:
        rec = {"record": "summary", "answer": self.text, "source": self.source, "episodes": self.episode, "total_steps": self.total_steps}
        if self.completeness is not None:
            rec["completeness"] = self.completeness
        return rec


class Gateway(Protocol):
    def catalog(self) -> list[dict[str, Any]]: ...
    def dispatch(self, call: ToolCall): ...


class StepReviewer(Protocol):
    """Hook run on every proposed tool call before it is executed."""

    def review(self, state: RunState, request: ChatRequest, thought: str, action: ToolCall) -> tuple[str, ToolCall]: ...


def build_request(log: TrajectoryLog, config: EpisodeConfig, gateway: Gateway | None, extra_user: str | None = None) -> ChatRequest:
    ctx = build_context(log, config.context_policy)
    messages = render_context(ctx, config.system_prompt)
    if extra_user:
        messages.append({"role": "user", "content": extra_user})
    tools = tuple(gateway.catalog()) if gateway is not None else ()
    return ChatRequest(tuple(messages), tools, config.sampling, tokenizer=config.context_policy.tokenizer)


def _complete(backend: ModelBackend, request: ChatRequest, retries: int):
    last: Exception | None = None
    for _ in range(retries + 1):
        try:
            return backend.complete(request)
        except BackendError as exc:
            last = exc
            logger.warning("model call failed: %s", exc)
    raise BackendError(str(last))


def run_step(
    state: RunState,
    config: EpisodeConfig,
    backend: ModelBackend,
    gateway: Gateway,
    reviewer: StepReviewer | None = None,
) -> RunState:
    if state.status != IN_PROGRESS:
        raise ContractViolation(f"cannot step a run in state {state.status!r}")
    if len(state.log.steps) >= config.max_turns:
        raise ContractViolation("turn budget already exhausted")
    request = build_request(state.log, config, gateway)
    try:
        resp = _complete(backend, request, config.step_retries)
    except (BackendError, ContractViolation) as exc:
        logger.warning("episode %d ends: %s", state.episode, exc)
        return replace(state, status=FAILED)

    index = len(state.log.steps) + 1
    thought, action = resp.thought, resp.action
    if isinstance(action, ToolCall):
        if reviewer is not None:
            thought, action = reviewer.review(state, request, thought, action)
        executed, result = gateway.dispatch(action)
        log = append_step(state.log, Step(index, thought, executed, result.output))
        return replace(state, log=log, malformed_streak=0)

    log = append_step(state.log, Step(index, thought, action))
    if action.well_formed:
        return replace(state, log=log, status=ANSWERED, malformed_streak=0)
    streak = state.malformed_streak + 1
    status = FORMAT_ERROR if streak >= config.format_error_limit else IN_PROGRESS
    return replace(state, log=log, status=status, malformed_streak=streak)


def run_episode(
    query: str,
    episode: int,
    config: EpisodeConfig,
    backend: ModelBackend,
    gateway: Gateway,
    reviewer: StepReviewer | None = None,
) -> RunState:
    if not 1 <= episode <= config.max_retries:
        raise ContractViolation(f"episode {episode} outside 1..{config.max_retries}")
    state = RunState.fresh(query, episode)
    while state.status == IN_PROGRESS and len(state.log.steps) < config.max_turns:
        state = run_step(state, config, backend, gateway, reviewer)
    if state.status == IN_PROGRESS:
        state = replace(state, status=TURN_BUDGET_EXHAUSTED)
    return state


_CANDIDATE_PATTERNS = (
    re.compile(r"candidate answer\s*[:：]\s*(?P<ans>[^\n]+)", re.IGNORECASE),
    re.compile(
        r"\b(?:the|my) (?:best |current |likely |final )?answer "
        r"(?:appears to be|seems to be|is (?:most )?likely|is probably|might be|should be|is)\s*:?\s+"
        r"(?!not\b|unclear\b|unknown\b|still\b)(?P<ans>[^\n]+?)(?=[.;!?](?:\s|$)|\n|$)",
        re.IGNORECASE,
    ),
)


def _clean(candidate: str) -> str:
    return candidate.strip().strip("*_`\"'“”").rstrip(".;,").strip()


def candidates_in(text: str) -> list[tuple[int, str]]:
    """All candidate-answer statements in ``text`` as (position, answer)."""
    found = []
    for pat in _CANDIDATE_PATTERNS:
        for m in pat.finditer(text):
            ans = _clean(m.group("ans"))
            if ans:
                found.append((m.start(), ans))
    return sorted(found)


def extract_fallback_answer(log: TrajectoryLog) -> str | None:
    """The most recent candidate answer stated in the log's thoughts, if any."""
    for step in reversed(log.steps):
        found = candidates_in(step.thought)
        if found:
            return found[-1][1]
    return None


def force_answer(
    log: TrajectoryLog, config: EpisodeConfig, backend: ModelBackend, gateway: Gateway | None = None
) -> tuple[str | None, str]:
    """One extra model call asking for an answer now; outside the turn budget."""
    request = build_request(log, config, gateway, extra_user=prompts.load("answer_now"))
    try:
        resp = _complete(backend, request, config.step_retries)
    except (BackendError, ContractViolation) as exc:
        logger.warning("forced answer attempt failed: %s", exc)
        return None, ""
    if isinstance(resp.action, AnswerAction) and resp.action.well_formed:
        return resp.action.text, resp.thought
    return None, resp.thought


def run_task(
    query: str,
    config: EpisodeConfig,
    backend: ModelBackend,
    gateway: Gateway,
    reviewer: StepReviewer | None = None,
    on_record: Callable[[dict[str, Any]], None] | None = None,
) -> FinalAnswer:
    """Run up to ``max_retries`` episodes; always returns an answer."""
    logs: list[TrajectoryLog] = []
    total = 0
    state = None
    for episode in range(1, config.max_retries + 1):
        state = run_episode(query, episode, config, backend, gateway, reviewer)
        logs.append(state.log)
        total += len(state.log.steps)
        if on_record:
            for rec in log_records(state.log):
                on_record(rec)
        if state.status == ANSWERED:
            return _finish(FinalAnswer(state.answer, MODEL_FINAL, episode, total, logs=tuple(logs)), on_record)

    assert state is not None
    text, thought = force_answer(state.log, config, backend, gateway)
    if text:
        return _finish(FinalAnswer(text, MODEL_FINAL, state.episode, total, logs=tuple(logs)), on_record)
    found = candidates_in(thought)
    candidate = found[-1][1] if found else None
    for log in reversed(logs):
        if candidate:
            break
        candidate = extract_fallback_answer(log)
    return _finish(FinalAnswer(candidate or NO_ANSWER, FALLBACK_EXTRACTED, state.episode, total, logs=tuple(logs)), on_record)


def _finish(answer: FinalAnswer, on_record) -> FinalAnswer:
    if on_record:
        on_record(answer.summary_record())
    return answer
