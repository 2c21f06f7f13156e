"""Trajectory log and the context operator that bounds what the model sees.

The log keeps every thought, action and observation verbatim. The effective
context keeps every thought and action, truncates the observations of the
``window`` most recent steps to ``obs_limit`` tokens, and masks the rest.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Iterator

from dualloop.actions import Action, ToolCall, action_from_dict
from dualloop.errors import ContractViolation

TRUNCATION_MARKER = "[Result truncated]"
# Joined between the kept prefix and the marker; part of the marker's token cost.
MARKER_SEPARATOR = "\n"
MARKER_SUFFIX = MARKER_SEPARATOR + TRUNCATION_MARKER
MASKED_PLACEHOLDER = "[observation omitted]"


class WhitespaceTokenizer:
    """Counts whitespace-delimited words. Deterministic; used by tests."""

    name = "whitespace"
    _token = re.compile(r"\S+")

    def count(self, text: str) -> int:
        return sum(1 for _ in self._token.finditer(text))

    def prefix(self, text: str, n: int) -> str:
        """Return ``text`` up to the end of its ``n``-th token."""
        end = 0
        for i, m in enumerate(self._token.finditer(text)):
            if i == n:
                break
            end = m.end()
        return text[:end]


class ByteHeuristicTokenizer:
    """Approximates tokens as UTF-8 bytes / 4, rounded up. Used for live runs."""

    name = "bytes4"

    def count(self, text: str) -> int:
        return math.ceil(len(text.encode("utf-8")) / 4)

    def prefix(self, text: str, n: int) -> str:
        raw = text.encode("utf-8")[: 4 * n]
        # never split a multi-byte character
        return raw.decode("utf-8", errors="ignore")


TOKENIZERS = {t.name: t for t in (WhitespaceTokenizer(), ByteHeuristicTokenizer())}


def get_tokenizer(name: str):
    try:
        return TOKENIZERS[name]
    except KeyError:
        raise ContractViolation(f"unknown tokenizer {name!r}; choose from {sorted(TOKENIZERS)}") from None


@dataclass(frozen=True)
class Step:
    index: int
    thought: str
    action: Action
    observation: str | None = None

    def __post_init__(self) -> None:
        if self.index < 1:
            raise ContractViolation(f"step index must be >= 1, got {self.index}")
        if self.observation is not None and not isinstance(self.action, ToolCall):
            raise ContractViolation("only tool-call steps carry an observation")


@dataclass(frozen=True)
class TrajectoryLog:
    episode: int
    query: str
    steps: tuple[Step, ...] = ()

    def __post_init__(self) -> None:
        if self.episode < 1:
            raise ContractViolation(f"episode must be >= 1, got {self.episode}")
        for expected, step in enumerate(self.steps, start=1):
            if step.index != expected:
                raise ContractViolation(f"step indices must be contiguous from 1; found {step.index} at {expected}")

    def __len__(self) -> int:
        return len(self.steps)


@dataclass(frozen=True)
class ContextPolicy:
    window: int = 5
    obs_limit: int = 2048
    tokenizer: str = "whitespace"

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ContractViolation(f"window must be >= 1, got {self.window}")
        if self.obs_limit < 1:
            raise ContractViolation(f"obs_limit must be >= 1, got {self.obs_limit}")
        get_tokenizer(self.tokenizer)


@dataclass(frozen=True)
class ContextEntry:
    index: int
    thought: str
    action: Action
    observation: str | None
    masked: bool = False

    def rendered_observation(self) -> str | None:
        return MASKED_PLACEHOLDER if self.masked else self.observation


@dataclass(frozen=True)
class EffectiveContext:
    query: str
    entries: tuple[ContextEntry, ...] = field(default_factory=tuple)

    def observation_tokens(self, tokenizer) -> int:
        """Token mass of the retained (unmasked) observations."""
        return sum(tokenizer.count(e.observation) for e in self.entries if e.observation is not None and not e.masked)


def append_step(log: TrajectoryLog, step: Step) -> TrajectoryLog:
    expected = len(log.steps) + 1
    if step.index != expected:
        raise ContractViolation(f"expected step index {expected}, got {step.index}")
    return TrajectoryLog(log.episode, log.query, log.steps + (step,))


def window_indices(t: int, K: int) -> set[int]:
    if t < 1 or K < 1:
        raise ContractViolation(f"t and K must be >= 1, got t={t}, K={K}")
    return set(range(max(1, t - K), t))


def marker_tokens(tokenizer) -> int:
    return tokenizer.count(MARKER_SUFFIX)


def truncate_observation(obs: str, L: int, tokenizer=None) -> str:
    """Clip ``obs`` to at most ``L`` tokens, appending the truncation marker if clipped.

    The marker's own tokens do not count against ``L``; an already-truncated
    observation is returned as is, which makes the operation idempotent.
    """
    if L < 1:
        raise ContractViolation(f"truncation limit must be >= 1, got {L}")
    tok = tokenizer or TOKENIZERS["whitespace"]
    if isinstance(tok, str):
        tok = get_tokenizer(tok)
    if tok.count(obs) <= L:
        return obs
    if obs.endswith(MARKER_SUFFIX) and tok.count(obs[: -len(MARKER_SUFFIX)]) <= L:
        return obs
    return tok.prefix(obs, L) + MARKER_SUFFIX


def build_context(log: TrajectoryLog, policy: ContextPolicy, t: int | None = None) -> EffectiveContext:
    if t is None:
        t = len(log.steps) + 1
    if t != len(log.steps) + 1:
        raise ContractViolation(f"t={t} inconsistent with a log of {len(log.steps)} steps")
    tok = get_tokenizer(policy.tokenizer)
    keep = window_indices(t, policy.window)
    entries = []
    for step in log.steps:
        if step.observation is None:
            entries.append(ContextEntry(step.index, step.thought, step.action, None))
        elif step.index in keep:
            obs = truncate_observation(step.observation, policy.obs_limit, tok)
            entries.append(ContextEntry(step.index, step.thought, step.action, obs))
        else:
            entries.append(ContextEntry(step.index, step.thought, step.action, None, masked=True))
    return EffectiveContext(log.query, tuple(entries))


# -- JSON Lines ---------------------------------------------------------------


def step_record(episode: int, step: Step) -> dict[str, Any]:
    return {
        "record": "step",
        "episode": episode,
        "index": step.index,
        "thought": step.thought,
        "action": step.action.to_dict(),
        "observation": step.observation,
    }


def log_records(log: TrajectoryLog) -> Iterator[dict[str, Any]]:
    for step in log.steps:
        yield step_record(log.episode, step)


def dump_jsonl(records: Iterable[dict[str, Any]], fp: IO[str]) -> None:
    for rec in records:
        fp.write(json.dumps(rec, ensure_ascii=False, sort_keys=True))
        fp.write("\n")


def load_logs(lines: Iterable[str], query: str = "") -> list[TrajectoryLog]:
    """Rebuild per-episode logs from step records; other record types are skipped.

    Records carrying an ``attempt`` field (answer-level resampling) are grouped per attempt.
    """
    by_episode: dict[tuple[int, int], list[Step]] = {}
    for line in lines:
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        if rec.get("record", "step") != "step":
            continue
        step = Step(rec["index"], rec["thought"], action_from_dict(rec["action"]), rec.get("observation"))
        by_episode.setdefault((rec.get("attempt", 0), rec["episode"]), []).append(step)
    return [TrajectoryLog(e, query, tuple(steps)) for (_, e), steps in sorted(by_episode.items())]
