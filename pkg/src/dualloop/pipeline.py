"""One query end to end: agent loop, optional step audits, optional answer-level verification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from dualloop.agent import EpisodeConfig, FinalAnswer, run_task
from dualloop.errors import ContractViolation
from dualloop.verifier import DEFAULT_THRESHOLD, Candidate, ComputeBudget, LocalVerifier, global_verify_detailed

logger = logging.getLogger(__name__)

MODES = ("none", "local", "global", "heavy")


@dataclass
class Pipeline:
    """``mode``: none, local (step audits), global (answer audits), heavy (both).

    ``auditor`` is the backend for step audits; ``chain_auditor`` is a backend
    or a ChainAuditor used for evidence chains. Both default to ``backend``.
    """

    config: EpisodeConfig
    backend: Any
    gateway: Any
    mode: str = "none"
    auditor: Any = None
    chain_auditor: Any = None
    budget: ComputeBudget = field(default_factory=ComputeBudget)
    threshold: float = DEFAULT_THRESHOLD
    local_every: int = 1
    runner_mode: str = "resample"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ContractViolation(f"unknown verification mode {self.mode!r}; choose from {', '.join(MODES)}")

    def _attempt(self, query: str, on_record: Callable[[dict], None] | None) -> FinalAnswer:
        reviewer = None
        if self.mode in ("local", "heavy"):
            reviewer = LocalVerifier(self.auditor or self.backend, self.local_every, on_record)
        return run_task(query, self.config, self.backend, self.gateway, reviewer, on_record)

    def solve(self, query: str, on_record: Callable[[dict[str, Any]], None] | None = None) -> FinalAnswer:
        if self.mode not in ("global", "heavy"):
            return self._attempt(query, on_record)

        # the baseline run is the runner's first call, so a budget of m means m runs in total
        attempts = [0]

        def runner(q: str, mode: str, prev: Candidate | None):
            attempts[0] += 1
            n = attempts[0]
            tagged = (lambda rec: on_record({**rec, "attempt": n})) if on_record else None
            if mode == "complete" and prev is not None:
                gaps = "; ".join(prev.chain.gaps) if prev.chain else ""
                q = f"{q}\n\nA previous attempt answered: {prev.answer}\nUnsupported parts: {gaps or 'none listed'}\nVerify or improve it."
            return self._attempt(q, tagged)

        result = global_verify_detailed(
            query, [], self.budget, runner, self.chain_auditor or self.auditor or self.backend, self.threshold, self.runner_mode, max_workers=1
        )
        logger.info("global verification used %d runs", result.runner_calls)
        if on_record:
            on_record(
                {
                    "record": "global_verification",
                    "candidates": [{"answer": c.answer, "completeness": c.score} for c in result.candidates],
                    "runner_calls": result.runner_calls,
                    "selected": result.answer.text,
                    "completeness": result.answer.completeness,
                }
            )
        return result.answer
