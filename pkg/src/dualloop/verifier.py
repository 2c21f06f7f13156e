"""Heavy-duty reasoning: step-level auditing and evidence-chain selection under a compute budget."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence, Union

from dualloop import prompts
from dualloop.actions import AnswerAction, ToolCall
from dualloop.agent import FALLBACK_EXTRACTED, MODEL_FINAL, NO_ANSWER, FinalAnswer, RunState, extract_fallback_answer
from dualloop.backend import ChatRequest, ModelBackend, SamplingParams
from dualloop.context import TrajectoryLog
from dualloop.errors import ContractViolation, ScriptExhausted

logger = logging.getLogger(__name__)

APPROVE = "approve"
REVISE = "revise"
DEFAULT_THRESHOLD = 0.8

_AUDIT_SAMPLING = SamplingParams(temperature=0.0, top_p=1.0, max_output_tokens=4096)


@dataclass(frozen=True)
class StepVerdict:
    decision: str
    critique: str = ""
    alternatives: tuple[ToolCall, ...] = ()

    def __post_init__(self) -> None:
        if self.decision not in (APPROVE, REVISE):
            raise ContractViolation(f"unknown decision {self.decision!r}")
        if self.decision == REVISE and not (self.alternatives or self.critique.strip()):
            raise ContractViolation("a revise verdict needs an alternative or a critique")
        if self.decision == APPROVE and self.alternatives:
            raise ContractViolation("an approve verdict carries no alternatives")

    def to_record(self, episode: int, index: int) -> dict[str, Any]:
        return {
            "record": "step_verdict",
            "episode": episode,
            "index": index,
            "decision": self.decision,
            "critique": self.critique,
            "alternatives": [a.to_dict() for a in self.alternatives],
        }


@dataclass(frozen=True)
class Claim:
    text: str
    support: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvidenceChain:
    claims: tuple[Claim, ...]
    completeness: float
    gaps: tuple[str, ...] = ()

    def to_record(self, answer: str) -> dict[str, Any]:
        return {
            "record": "evidence_chain",
            "answer": answer,
            "claims": [{"claim": c.text, "support": list(c.support)} for c in self.claims],
            "completeness": self.completeness,
            "gaps": list(self.gaps),
        }


@dataclass(frozen=True)
class ComputeBudget:
    multiplier: int = 16
    max_candidates: int | None = None

    def __post_init__(self) -> None:
        if self.multiplier < 1:
            raise ContractViolation(f"budget multiplier must be >= 1, got {self.multiplier}")
        if self.max_candidates is None:
            object.__setattr__(self, "max_candidates", self.multiplier)
        elif self.max_candidates < 1:
            raise ContractViolation("max_candidates must be >= 1")


# -- local verification ----------------------------------------------------------


def _describe(thought: str, action: ToolCall) -> str:
    args = json.dumps(action.arguments, ensure_ascii=False, sort_keys=True)
    return f"Reasoning: {thought}\nTool call: {action.tool_name}({args})"


def local_verify(
    state: RunState,
    thought: str,
    action: ToolCall,
    backend: ModelBackend,
    request: ChatRequest | None = None,
) -> StepVerdict:
    """Audit one proposed tool call. Any failure of the audit itself approves the step."""
    history = list(request.messages) if request is not None else [{"role": "user", "content": state.query}]
    audit = prompts.load("local_audit").format(query=state.query, proposed=_describe(thought, action))
    tools = request.tools if request is not None else ()
    audit_request = ChatRequest(tuple(history + [{"role": "user", "content": audit}]), tools, _AUDIT_SAMPLING)
    try:
        resp = backend.complete(audit_request)
    except ScriptExhausted:
        raise
    except Exception as exc:
        logger.warning("local audit failed, approving by default: %s", exc)
        return StepVerdict(APPROVE)
    if isinstance(resp.action, ToolCall):
        return StepVerdict(REVISE, resp.thought, (resp.action,))
    text = resp.action.text.strip()
    if resp.action.well_formed and text.lower().startswith(REVISE):
        critique = text[len(REVISE) :].lstrip(" :\n") or resp.thought
        if critique.strip():
            return StepVerdict(REVISE, critique)
    return StepVerdict(APPROVE)


def apply_verdict(thought: str, action: ToolCall, verdict: StepVerdict) -> tuple[str, ToolCall]:
    if verdict.decision == APPROVE:
        return thought, action
    new_action = verdict.alternatives[0] if verdict.alternatives else action
    if verdict.critique.strip():
        thought = f"{thought}\n\n[local verifier] {verdict.critique.strip()}" if thought else f"[local verifier] {verdict.critique.strip()}"
    return thought, new_action


class LocalVerifier:
    """Step reviewer for the agent loop; audits every ``every``-th proposed tool call."""

    def __init__(self, backend: ModelBackend, every: int = 1, on_record: Callable[[dict], None] | None = None):
        if every < 1:
            raise ContractViolation("every must be >= 1")
        self.backend = backend
        self.every = every
        self.on_record = on_record
        self.verdicts: list[StepVerdict] = []

    def review(self, state: RunState, request: ChatRequest, thought: str, action: ToolCall) -> tuple[str, ToolCall]:
        if len(state.log.steps) % self.every:
            return thought, action
        verdict = local_verify(state, thought, action, self.backend, request)
        self.verdicts.append(verdict)
        if self.on_record:
            self.on_record(verdict.to_record(state.episode, len(state.log.steps) + 1))
        return apply_verdict(thought, action, verdict)


# -- evidence chains -----------------------------------------------------------------


class ChainAuditor(Protocol):
    def claims(self, query: str, log: TrajectoryLog, answer: str) -> list[Claim]: ...


def _observations(log: TrajectoryLog) -> dict[int, str]:
    return {s.index: s.observation for s in log.steps if s.observation is not None}


class ModelChainAuditor:
    """Asks a model to decompose the answer into claims and cite supporting steps."""

    def __init__(self, backend: ModelBackend):
        self.backend = backend

    def claims(self, query, log, answer):
        obs = _observations(log)
        body = "\n\n".join(f"[step {i}]\n{o}" for i, o in sorted(obs.items()))
        prompt = prompts.load("chain_audit").format(query=query, answer=answer, observations=body)
        resp = self.backend.complete(ChatRequest(({"role": "user", "content": prompt},), sampling=_AUDIT_SAMPLING))
        text = resp.action.text if isinstance(resp.action, AnswerAction) else ""
        start, end = text.find("{"), text.rfind("}")
        if start < 0 or end < start:
            raise ValueError("audit reply contained no JSON object")
        data = json.loads(text[start : end + 1])
        return [Claim(str(c["claim"]), tuple(int(i) for i in c.get("support") or ())) for c in data["claims"]]


_STOP = frozenset("the a an and or of in on at to for by with from is was are were be been that this it its as".split())
_WORD = re.compile(r"\w+", re.UNICODE)


def _content_words(text: str) -> set[str]:
    return {w for w in (x.lower() for x in _WORD.findall(text)) if w not in _STOP}


class LexicalChainAuditor:
    """Model-free auditor: a claim is supported by every observation containing all its content words.

    Claims are the answer split on semicolons, newlines and sentence ends.
    """

    def claims(self, query, log, answer):
        parts = [p.strip() for p in re.split(r";|\n|(?<=[.!?])\s+", answer) if p.strip()]
        obs = {i: _content_words(o) for i, o in _observations(log).items()}
        out = []
        for part in parts:
            words = _content_words(part)
            support = tuple(i for i, ow in sorted(obs.items()) if words and words <= ow)
            out.append(Claim(part, support))
        return out


def _as_auditor(backend) -> ChainAuditor:
    return backend if hasattr(backend, "claims") else ModelChainAuditor(backend)


def audit_chain(log: TrajectoryLog, answer: str, backend, query: str | None = None) -> EvidenceChain:
    if not answer.strip():
        raise ContractViolation("answer must be non-empty")
    obs = _observations(log)
    if not obs:
        return EvidenceChain((), 0.0, ("trajectory contains no observations",))
    try:
        raw = _as_auditor(backend).claims(query if query is not None else log.query, log, answer)
    except ScriptExhausted:
        raise
    except Exception as exc:
        logger.warning("evidence audit failed: %s", exc)
        return EvidenceChain((), 0.0, (f"audit failed: {exc}",))
    claims = tuple(Claim(c.text, tuple(i for i in c.support if i in obs)) for c in raw)
    if not claims:
        return EvidenceChain((), 0.0, ("answer could not be decomposed into claims",))
    supported = sum(1 for c in claims if c.support)
    gaps = tuple(f"unsupported claim: {c.text}" for c in claims if not c.support)
    return EvidenceChain(claims, supported / len(claims), gaps)


# -- global verification -------------------------------------------------------------


@dataclass
class Candidate:
    answer: str
    log: TrajectoryLog
    chain: EvidenceChain | None = None
    source: str = MODEL_FINAL
    steps: int | None = None

    @property
    def score(self) -> float:
        return self.chain.completeness if self.chain else 0.0


RunnerOutput = Union[FinalAnswer, tuple[str, TrajectoryLog], None]
Runner = Callable[[str, str, Union[Candidate, None]], RunnerOutput]


def _candidate(out: RunnerOutput) -> Candidate | None:
    if out is None:
        return None
    if isinstance(out, FinalAnswer):
        log = out.logs[-1] if out.logs else TrajectoryLog(max(out.episode, 1), "")
        return Candidate(out.text, log, source=out.source, steps=out.total_steps)
    answer, log = out
    return Candidate(answer, log)


def select_best(candidates: Sequence[Candidate]) -> Candidate:
    """Highest completeness; the earliest candidate wins ties."""
    best = candidates[0]
    for c in candidates[1:]:
        if c.score > best.score:
            best = c
    return best


@dataclass
class GlobalVerification:
    answer: FinalAnswer
    candidates: list[Candidate] = field(default_factory=list)
    runner_calls: int = 0


def global_verify(
    query: str,
    candidates: Sequence[tuple[str, TrajectoryLog] | FinalAnswer],
    budget: ComputeBudget,
    runner: Runner | None,
    backend,
    threshold: float = DEFAULT_THRESHOLD,
    mode: str = "resample",
    max_workers: int = 4,
) -> FinalAnswer:
    return global_verify_detailed(query, candidates, budget, runner, backend, threshold, mode, max_workers).answer


def global_verify_detailed(
    query: str,
    candidates: Sequence[tuple[str, TrajectoryLog] | FinalAnswer],
    budget: ComputeBudget,
    runner: Runner | None,
    backend,
    threshold: float = DEFAULT_THRESHOLD,
    mode: str = "resample",
    max_workers: int = 4,
) -> GlobalVerification:
    """Audit candidates, resampling while evidence is insufficient and budget remains."""
    if mode not in ("resample", "complete"):
        raise ContractViolation(f"unknown runner mode {mode!r}")
    if not candidates and runner is None:
        raise ContractViolation("need at least one candidate or a runner")
    seen_logs: list[TrajectoryLog] = []

    def admit(c: Candidate | None) -> Candidate | None:
        if c is None:
            return None
        seen_logs.append(c.log)
        if not c.answer.strip() or c.answer == NO_ANSWER:
            return None
        return c

    pool = [c for c in (admit(_candidate(x)) for x in candidates) if c is not None]
    if len(pool) > 1 and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            chains = list(ex.map(lambda c: audit_chain(c.log, c.answer, backend, query), pool))
    else:
        chains = [audit_chain(c.log, c.answer, backend, query) for c in pool]
    for c, chain in zip(pool, chains):
        c.chain = chain

    calls = 0
    while runner is not None and calls < budget.max_candidates and (not pool or select_best(pool).score < threshold):
        prev = select_best(pool) if (pool and mode == "complete") else None
        calls += 1
        c = admit(_candidate(runner(query, mode, prev)))
        if c is None:
            continue
        c.chain = audit_chain(c.log, c.answer, backend, query)
        pool.append(c)

    steps = sum(c.steps if c.steps is not None else len(c.log.steps) for c in pool)
    if not pool:
        fallback = None
        for log in reversed(seen_logs):
            fallback = extract_fallback_answer(log)
            if fallback:
                break
        steps = sum(len(log.steps) for log in seen_logs)
        return GlobalVerification(FinalAnswer(fallback or NO_ANSWER, FALLBACK_EXTRACTED, 0, steps, 0.0), [], calls)
    best = select_best(pool)
    answer = FinalAnswer(best.answer, best.source, best.log.episode, steps, best.score, logs=(best.log,))
    return GlobalVerification(answer, pool, calls)
