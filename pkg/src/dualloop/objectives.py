"""Model-free evaluation of the training objectives on log-probability and reward records.

Every function here is a pure function of plain floats. Expectations are
arithmetic means over the supplied batch.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Any, Iterable, Sequence

from dualloop.errors import ContractViolation


@dataclass(frozen=True)
class TokenLogProbs:
    values: tuple[float, ...]
    mask: tuple[bool, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        mask = tuple(bool(m) for m in self.mask) if self.mask is not None else (True,) * len(self.values)
        object.__setattr__(self, "mask", mask)
        if len(mask) != len(self.values):
            raise ContractViolation(f"mask length {len(mask)} != values length {len(self.values)}")
        if any(v > 0 or math.isnan(v) for v in self.values):
            raise ContractViolation("log-probabilities must be <= 0")

    def masked_sum(self) -> float:
        return math.fsum(v for v, m in zip(self.values, self.mask) if m)

    @property
    def supervised(self) -> int:
        return sum(self.mask)


@dataclass(frozen=True)
class PreferencePair:
    policy_chosen: float
    policy_rejected: float
    ref_chosen: float
    ref_rejected: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(x) for x in (self.policy_chosen, self.policy_rejected, self.ref_chosen, self.ref_rejected)):
            raise ContractViolation("preference pair log-probabilities must be finite")


@dataclass(frozen=True)
class RolloutGroup:
    rewards: tuple[float, ...]
    policy: tuple[TokenLogProbs, ...]
    reference: tuple[TokenLogProbs, ...]

    def __post_init__(self) -> None:
        if not self.rewards:
            raise ContractViolation("a rollout group needs at least one trajectory")
        if not all(math.isfinite(r) for r in self.rewards):
            raise ContractViolation("rewards must be finite")
        if not (len(self.policy) == len(self.reference) == len(self.rewards)):
            raise ContractViolation("rewards, policy and reference records must have one entry per trajectory")
        for p, r in zip(self.policy, self.reference):
            if len(p.values) != len(r.values) or p.mask != r.mask:
                raise ContractViolation("policy and reference records are not aligned per token")


@dataclass(frozen=True)
class ObjectiveParams:
    beta: float = 0.1
    lam: float = 1.0
    alpha_c: float = 1.0
    alpha_f: float = 1.0
    beta0: float = 0.0
    beta_ent: float = 0.0
    tau: float = -5.0

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ContractViolation("beta must be > 0")
        if self.lam < 0:
            raise ContractViolation("lambda must be >= 0")
        if self.beta0 < 0 or self.beta_ent < 0:
            raise ContractViolation("KL coefficients must be >= 0")


def nll_loss(records: Sequence[TokenLogProbs]) -> float:
    """Mean over records of the negated sum of supervised log-probs.

    With one supervised turn per record this is the mid-training loss; with all
    assistant turns supervised it is the SFT loss.
    """
    if not records or sum(r.supervised for r in records) == 0:
        raise ContractViolation("no supervised tokens")
    return -math.fsum(r.masked_sum() for r in records) / len(records)


def neg_log_sigmoid(z: float) -> float:
    """-log(sigmoid(z)) = softplus(-z), stable for large |z|."""
    return max(-z, 0.0) + math.log1p(math.exp(-abs(z)))


def dpo_loss(pair: PreferencePair, beta: float) -> float:
    if beta <= 0:
        raise ContractViolation("beta must be > 0")
    policy_margin = pair.policy_chosen - pair.policy_rejected
    ref_margin = pair.ref_chosen - pair.ref_rejected
    return neg_log_sigmoid(beta * (policy_margin - ref_margin))


def po_loss(pair: PreferencePair, chosen_nll: float, params: ObjectiveParams) -> float:
    return dpo_loss(pair, params.beta) + params.lam * chosen_nll


def reward(correct: bool, format_violation: bool, params: ObjectiveParams) -> float:
    return params.alpha_c * float(bool(correct)) - params.alpha_f * float(bool(format_violation))


def group_advantages(rewards: Sequence[float]) -> list[float]:
    if not rewards:
        raise ContractViolation("group must contain at least one reward")
    mean = math.fsum(rewards) / len(rewards)
    return [r - mean for r in rewards]


def kl_coefficient(advantage: float, token_logprob: float, params: ObjectiveParams) -> float:
    gate = advantage < 0 and token_logprob < params.tau
    return params.beta0 + params.beta_ent * float(gate)


def token_kl(policy_logprob: float, ref_logprob: float) -> float:
    """Sampled-token KL estimate log pi(a|s) - log pi_ref(a|s)."""
    return policy_logprob - ref_logprob


def grpo_objective(group: RolloutGroup, params: ObjectiveParams) -> float:
    """Mean over trajectories of A * sum(log pi) - sum_t beta_KL(t) * kl(t), over supervised tokens.

    Implemented as written: no importance ratio and no clipping.
    """
    advs = group_advantages(group.rewards)
    per_traj = []
    for adv, pol, ref in zip(advs, group.policy, group.reference):
        pg = adv * pol.masked_sum()
        kl = math.fsum(
            kl_coefficient(adv, p, params) * token_kl(p, r) for p, r, m in zip(pol.values, ref.values, pol.mask) if m
        )
        per_traj.append(pg - kl)
    return math.fsum(per_traj) / len(per_traj)


def schedule_rollouts(pending: Iterable[tuple[Any, float, int]]) -> list[tuple[Any, float, int]]:
    """Oldest first, then most attempts, then task id. Python's sort is stable for full ties."""
    return sorted(pending, key=lambda p: (-p[1], -p[2], p[0]))


# -- fixture files ------------------------------------------------------------------


@dataclass
class GroupRecord:
    """One fixture line: a group of G trajectories."""

    rewards: list[float]
    policy_logprobs: list[list[float]]
    ref_logprobs: list[list[float]]
    masks: list[list[bool]] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GroupRecord":
        pol = [list(map(float, x)) for x in d["policy_logprobs"]]
        ref = [list(map(float, x)) for x in d.get("ref_logprobs") or pol]
        masks = [list(map(bool, x)) for x in d.get("masks") or [[True] * len(p) for p in pol]]
        rewards = [float(r) for r in d.get("rewards") or [0.0] * len(pol)]
        return cls(rewards, pol, ref, masks)

    def policy_records(self) -> list[TokenLogProbs]:
        return [TokenLogProbs(p, m) for p, m in zip(self.policy_logprobs, self.masks)]

    def reference_records(self) -> list[TokenLogProbs]:
        return [TokenLogProbs(r, m) for r, m in zip(self.ref_logprobs, self.masks)]

    def group(self) -> RolloutGroup:
        return RolloutGroup(tuple(self.rewards), tuple(self.policy_records()), tuple(self.reference_records()))

    def preference(self) -> tuple[PreferencePair, TokenLogProbs]:
        """Chosen = highest reward, rejected = lowest (first on ties); needs G >= 2."""
        if len(self.rewards) < 2:
            raise ContractViolation("a preference pair needs at least two trajectories")
        hi = max(range(len(self.rewards)), key=lambda i: (self.rewards[i], -i))
        lo = min(range(len(self.rewards)), key=lambda i: (self.rewards[i], i))
        if hi == lo:
            raise ContractViolation("chosen and rejected trajectories coincide")
        pol, ref = self.policy_records(), self.reference_records()
        pair = PreferencePair(pol[hi].masked_sum(), pol[lo].masked_sum(), ref[hi].masked_sum(), ref[lo].masked_sum())
        return pair, pol[hi]


def read_fixture(fp: IO[str]) -> list[GroupRecord]:
    out = []
    for n, line in enumerate(fp, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(GroupRecord.from_dict(json.loads(line)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ContractViolation(f"fixture line {n}: {exc}") from exc
    return out


OPS = ("nll", "dpo", "po", "grpo", "advantages", "reward")


def evaluate_fixture(records: Sequence[GroupRecord], op: str, params: ObjectiveParams) -> float:
    """Batch value of objective ``op`` over fixture records, averaged over lines."""
    if not records:
        raise ContractViolation("fixture has no records")
    if op == "nll":
        return nll_loss([r for rec in records for r in rec.policy_records()])
    if op == "dpo":
        return math.fsum(dpo_loss(rec.preference()[0], params.beta) for rec in records) / len(records)
    if op == "po":
        pairs = [rec.preference() for rec in records]
        dpo = math.fsum(dpo_loss(p, params.beta) for p, _ in pairs) / len(pairs)
        return dpo + params.lam * nll_loss([c for _, c in pairs])
    if op == "grpo":
        return math.fsum(grpo_objective(rec.group(), params) for rec in records) / len(records)
    if op == "advantages":
        # sum of advantages; zero up to rounding
        return math.fsum(a for rec in records for a in group_advantages(rec.rewards))
    if op == "reward":
        return math.fsum(r for rec in records for r in rec.rewards) / sum(len(rec.rewards) for rec in records)
    raise ContractViolation(f"unknown objective {op!r}; choose from {', '.join(OPS)}")
