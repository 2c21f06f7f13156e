from __future__ import annotations

import io
import json
import math
import random

import mpmath
import pytest

from dualloop.errors import ContractViolation
from dualloop.objectives import (
    GroupRecord,
    ObjectiveParams,
    PreferencePair,
    RolloutGroup,
    TokenLogProbs,
    dpo_loss,
    evaluate_fixture,
    grpo_objective,
    group_advantages,
    kl_coefficient,
    neg_log_sigmoid,
    nll_loss,
    po_loss,
    read_fixture,
    reward,
    schedule_rollouts,
)

LN2 = math.log(2)


# -- oracles -------------------------------------------------------------------------


def mp_neg_log_sigmoid(z):
    mpmath.mp.dps = 50
    return float(-mpmath.log(1 / (1 + mpmath.exp(-mpmath.mpf(z)))))


def grpo_oracle(rewards, pol, ref, masks, beta0, beta_ent, tau):
    """Explicit double loop over trajectories and tokens."""
    G = len(rewards)
    mean = 0.0
    for r in rewards:
        mean += r / G
    total = 0.0
    for i in range(G):
        adv = rewards[i] - mean
        logp = 0.0
        kl = 0.0
        for t in range(len(pol[i])):
            if not masks[i][t]:
                continue
            logp += pol[i][t]
            coef = beta0 + (beta_ent if (adv < 0 and pol[i][t] < tau) else 0.0)
            kl += coef * (pol[i][t] - ref[i][t])
        total += adv * logp - kl
    return total / G


def random_group(rng, G=None, T=None):
    G = G or rng.randint(1, 4)
    rewards = [rng.choice([0.0, 1.0, -0.5, 0.5]) for _ in range(G)]
    pol, ref, masks = [], [], []
    for _ in range(G):
        n = T or rng.randint(1, 6)
        pol.append([-rng.uniform(0, 10) for _ in range(n)])
        ref.append([-rng.uniform(0, 10) for _ in range(n)])
        masks.append([rng.random() < 0.8 for _ in range(n)])
    return rewards, pol, ref, masks


def to_group(rewards, pol, ref, masks):
    return RolloutGroup(tuple(rewards), tuple(TokenLogProbs(p, m) for p, m in zip(pol, masks)), tuple(TokenLogProbs(r, m) for r, m in zip(ref, masks)))


# -- records ---------------------------------------------------------------------------


def test_token_logprobs_invariants():
    with pytest.raises(ContractViolation):
        TokenLogProbs((0.1,))
    with pytest.raises(ContractViolation):
        TokenLogProbs((-1.0, -2.0), (True,))
    assert TokenLogProbs((-1.0, -2.0)).mask == (True, True)


def test_params_invariants():
    for kw in ({"beta": 0}, {"lam": -1}, {"beta0": -0.1}, {"beta_ent": -1}):
        with pytest.raises(ContractViolation):
            ObjectiveParams(**kw)


# -- NLL -------------------------------------------------------------------------------


def test_nll_examples():
    assert nll_loss([TokenLogProbs((-0.5, -1.5))]) == 2.0
    assert nll_loss([TokenLogProbs((0.0, 0.0, 0.0))]) == 0.0


def test_nll_two_records_against_accumulation():
    recs = [TokenLogProbs((-0.25, -1.0, -3.0), (True, False, True)), TokenLogProbs((-2.0,))]
    acc = 0.0
    for r in recs:
        s = 0.0
        for v, m in zip(r.values, r.mask):
            if m:
                s -= v
        acc += s
    assert nll_loss(recs) == pytest.approx(acc / 2, abs=1e-15)
    assert nll_loss(recs) == pytest.approx((3.25 + 2.0) / 2)


def test_nll_nonnegative_and_requires_supervision():
    rng = random.Random(0)
    for _ in range(200):
        recs = [TokenLogProbs(tuple(-rng.uniform(0, 3) for _ in range(4))) for _ in range(3)]
        assert nll_loss(recs) >= 0
    with pytest.raises(ContractViolation):
        nll_loss([TokenLogProbs((-1.0,), (False,))])
    with pytest.raises(ContractViolation):
        nll_loss([])


# -- DPO / PO --------------------------------------------------------------------------


def test_dpo_zero_margin_is_ln2():
    assert abs(dpo_loss(PreferencePair(-3.0, -5.0, -1.0, -3.0), 0.1) - LN2) < 1e-12


def test_dpo_saturates():
    assert dpo_loss(PreferencePair(20.0, 0.0, 0.0, 0.0), 1.0) < 1e-8
    assert dpo_loss(PreferencePair(-1e6, 0.0, 0.0, 0.0), 1.0) == pytest.approx(1e6)


def test_dpo_high_precision_example():
    got = dpo_loss(PreferencePair(0.3, -0.2, 0.1, 0.0), 0.5)
    assert got == pytest.approx(mp_neg_log_sigmoid(0.2), abs=1e-15)
    for z in (-40.0, -3.0, 0.0, 1e-9, 2.5, 35.0):
        assert neg_log_sigmoid(z) == pytest.approx(mp_neg_log_sigmoid(z), rel=1e-13, abs=1e-300)


def test_dpo_strictly_decreasing_in_policy_margin():
    vals = [dpo_loss(PreferencePair(m, 0.0, 0.0, 0.0), 0.5) for m in [x / 4 for x in range(-40, 41)]]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_dpo_shift_invariance():
    rng = random.Random(1)
    for _ in range(500):
        pc, pr, rc, rr = (rng.uniform(-30, 0) for _ in range(4))
        c = rng.uniform(-10, 10)
        a = dpo_loss(PreferencePair(pc, pr, rc, rr), 0.1)
        b = dpo_loss(PreferencePair(pc + c, pr + c, rc, rr), 0.1)
        assert abs(a - b) < 1e-12


def test_dpo_rejects_nonfinite_and_bad_beta():
    with pytest.raises(ContractViolation):
        PreferencePair(float("nan"), 0, 0, 0)
    with pytest.raises(ContractViolation):
        dpo_loss(PreferencePair(0, 0, 0, 0), 0.0)


def test_po_examples():
    pair = PreferencePair(-1.0, -2.0, -1.0, -2.0)
    assert po_loss(pair, 2.0, ObjectiveParams(lam=0.0)) == dpo_loss(pair, 0.1)
    assert po_loss(pair, 2.0, ObjectiveParams(lam=1.0)) == pytest.approx(2.693147, abs=1e-6)


def test_po_identity_random():
    rng = random.Random(2)
    for _ in range(300):
        pair = PreferencePair(*(rng.uniform(-10, 0) for _ in range(4)))
        lam, nll = rng.uniform(0, 3), rng.uniform(0, 10)
        p = ObjectiveParams(lam=lam)
        assert po_loss(pair, nll, p) - dpo_loss(pair, p.beta) == pytest.approx(lam * nll, abs=1e-12)


# -- reward, advantages, KL gate --------------------------------------------------------


def test_reward_examples():
    p = ObjectiveParams(alpha_c=1.0, alpha_f=0.5)
    assert reward(True, False, p) == 1.0
    assert reward(False, True, p) == -0.5
    assert reward(False, False, p) == 0.0


def test_group_advantages_examples():
    assert group_advantages([1, 0, 0, 1]) == [0.5, -0.5, -0.5, 0.5]
    assert group_advantages([0.3, 0.3, 0.3]) == [0.0, 0.0, 0.0]
    assert group_advantages([7.0]) == [0.0]
    with pytest.raises(ContractViolation):
        group_advantages([])


def test_group_advantages_zero_sum():
    rng = random.Random(3)
    for _ in range(1000):
        rs = [rng.uniform(-5, 5) for _ in range(rng.randint(1, 16))]
        assert abs(math.fsum(group_advantages(rs))) < 1e-9


def test_kl_coefficient_examples():
    p = ObjectiveParams(beta0=0.01, beta_ent=0.1, tau=-5)
    assert kl_coefficient(-0.5, -8, p) == pytest.approx(0.11, abs=1e-15)
    assert kl_coefficient(0.5, -8, p) == 0.01
    assert kl_coefficient(-0.5, -2, p) == 0.01


def test_kl_coefficient_truth_table():
    p = ObjectiveParams(beta0=0.25, beta_ent=0.5, tau=-5)
    table = {(True, True): 0.75, (True, False): 0.25, (False, True): 0.25, (False, False): 0.25}
    for (neg_adv, low_p), expected in table.items():
        assert kl_coefficient(-1.0 if neg_adv else 1.0, -9.0 if low_p else -1.0, p) == expected
    # zero advantage and logp at tau are both closed gates
    assert kl_coefficient(0.0, -9.0, p) == 0.25
    assert kl_coefficient(-1.0, -5.0, p) == 0.25


# -- GRPO -------------------------------------------------------------------------------


def test_grpo_zero_when_everything_vanishes():
    g = to_group([1.0, 1.0], [[-1.0, -2.0], [-3.0]], [[-0.5, -1.0], [-2.0]], [[True, True], [True]])
    assert grpo_objective(g, ObjectiveParams(beta0=0.0, beta_ent=0.0)) == 0.0


def test_grpo_policy_equals_reference_drops_kl():
    pol = [[-1.0, -2.0], [-0.5, -0.5]]
    g = to_group([1.0, 0.0], pol, pol, [[True, True], [True, True]])
    expected = (0.5 * -3.0 + -0.5 * -1.0) / 2
    assert grpo_objective(g, ObjectiveParams(beta0=0.3, beta_ent=0.7)) == pytest.approx(expected, abs=1e-15)


def test_grpo_hand_sized_group():
    # trajectory 1: A=+0.5, tokens (-1, -6) vs ref (-2, -4); coefficient 0.01 on both
    # trajectory 2: A=-0.5, tokens (-7, -1) vs ref (-5, -1); coefficient 0.11 on the first token only
    g = to_group([1.0, 0.0], [[-1.0, -6.0], [-7.0, -1.0]], [[-2.0, -4.0], [-5.0, -1.0]], [[True, True], [True, True]])
    p = ObjectiveParams(beta0=0.01, beta_ent=0.1, tau=-5)
    t1 = 0.5 * (-7.0) - (0.01 * 1.0 + 0.01 * -2.0)
    t2 = -0.5 * (-8.0) - (0.11 * -2.0 + 0.01 * 0.0)
    assert grpo_objective(g, p) == pytest.approx((t1 + t2) / 2, abs=1e-12)


def test_grpo_matches_term_by_term_oracle():
    rng = random.Random(4)
    for _ in range(100):
        rewards, pol, ref, masks = random_group(rng)
        p = ObjectiveParams(beta0=rng.uniform(0, 0.2), beta_ent=rng.uniform(0, 0.5), tau=rng.uniform(-8, -1))
        assert abs(grpo_objective(to_group(rewards, pol, ref, masks), p) - grpo_oracle(rewards, pol, ref, masks, p.beta0, p.beta_ent, p.tau)) < 1e-9


def test_grpo_rejects_misaligned():
    with pytest.raises(ContractViolation):
        RolloutGroup((1.0,), (TokenLogProbs((-1.0, -1.0)),), (TokenLogProbs((-1.0,)),))
    with pytest.raises(ContractViolation):
        RolloutGroup((1.0, 0.0), (TokenLogProbs((-1.0,)),), (TokenLogProbs((-1.0,)),))
    with pytest.raises(ContractViolation):
        RolloutGroup((), (), ())


# -- scheduler -------------------------------------------------------------------------


def test_schedule_by_age():
    out = schedule_rollouts([("a", 3, 0), ("b", 9, 0), ("c", 1, 0)])
    assert [t for t, _, _ in out] == ["b", "a", "c"]


def test_schedule_ties_and_stability():
    out = schedule_rollouts([("x", 5, 1), ("y", 5, 3), ("w", 5, 1)])
    assert [t for t, _, _ in out] == ["y", "w", "x"]
    same = [("k", 1, 1), ("k", 1, 1)]
    objs = [same[0], same[1]]
    assert all(a is b for a, b in zip(schedule_rollouts(objs), objs))


def test_schedule_permutation_invariant():
    rng = random.Random(5)
    items = [(f"t{i}", rng.randint(0, 4), rng.randint(0, 3)) for i in range(12)]
    ref = schedule_rollouts(items)
    for _ in range(50):
        shuffled = items[:]
        rng.shuffle(shuffled)
        assert schedule_rollouts(shuffled) == ref


# -- fixtures -------------------------------------------------------------------------


FIXTURE = [
    {"rewards": [1.0, 0.0], "policy_logprobs": [[-0.5, -1.5], [-2.0, -1.0]], "ref_logprobs": [[-1.0, -1.0], [-1.5, -1.5]]},
    {"rewards": [0.0, 1.0, 0.0], "policy_logprobs": [[-1.0], [-0.25], [-3.0]], "masks": [[True], [True], [False]]},
]


def _fixture_records():
    buf = io.StringIO("# comment\n" + "\n".join(json.dumps(r) for r in FIXTURE) + "\n\n")
    return read_fixture(buf)


def test_fixture_parsing_defaults():
    recs = _fixture_records()
    assert recs[1].ref_logprobs == recs[1].policy_logprobs
    assert recs[0].masks == [[True, True], [True, True]]


def test_fixture_ops():
    recs = _fixture_records()
    p = ObjectiveParams()
    # nll over all five trajectories: sums 2.0, 3.0, 1.0, 0.25, 0 (masked)
    assert evaluate_fixture(recs, "nll", p) == pytest.approx((2.0 + 3.0 + 1.0 + 0.25 + 0.0) / 5)
    # record 1: chosen=traj0 (-2 vs ref -2), rejected=traj1 (-3 vs ref -3) -> zero margin
    # record 2: chosen=traj1, rejected=traj0 (first of the tied minimum), policy == reference
    assert evaluate_fixture(recs, "dpo", p) == pytest.approx(LN2, abs=1e-12)
    assert evaluate_fixture(recs, "po", p) == pytest.approx(LN2 + (2.0 + 0.25) / 2, abs=1e-12)
    assert abs(evaluate_fixture(recs, "advantages", p)) < 1e-12
    assert evaluate_fixture(recs, "reward", p) == pytest.approx(2 / 5)
    g0 = grpo_oracle([1.0, 0.0], [[-0.5, -1.5], [-2.0, -1.0]], [[-1.0, -1.0], [-1.5, -1.5]], [[True] * 2] * 2, 0.0, 0.0, -5.0)
    g1 = grpo_oracle([0.0, 1.0, 0.0], [[-1.0], [-0.25], [-3.0]], [[-1.0], [-0.25], [-3.0]], [[True], [True], [False]], 0.0, 0.0, -5.0)
    assert evaluate_fixture(recs, "grpo", p) == pytest.approx((g0 + g1) / 2, abs=1e-12)


def test_fixture_errors():
    with pytest.raises(ContractViolation):
        read_fixture(io.StringIO('{"rewards": [1]}\n'))
    with pytest.raises(ContractViolation):
        evaluate_fixture(_fixture_records(), "ppo", ObjectiveParams())
    with pytest.raises(ContractViolation):
        GroupRecord.from_dict({"policy_logprobs": [[-1.0]], "rewards": [1.0]}).preference()
