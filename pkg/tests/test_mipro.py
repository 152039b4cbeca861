import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from structprompt.backends import ScriptedProposer, SimulatedLM, SimulatedLMSpec
from structprompt.bfrs import DemoPool
from structprompt.errors import UnavailableError
from structprompt.mipro import (CandidateSpace, MIPROParams, ProposalContext, build_context,
                                mipro_optimize, propose_instructions, render_proposer_prompt,
                                seed_config, tpe_acquire, tpe_fit)
from structprompt.program import Demonstration, Method, init_from_baseline
from structprompt.trials import TrialRecord

from conftest import make_split, oracle_J

SEED = init_from_baseline("Add the numbers.", Method.MIPROV2)
CTX = ProposalContext("summary", "program")


def test_no_proposals_requested():
    assert propose_instructions(ScriptedProposer(["x"]), CTX, 0, "seed") == ["seed"]


def test_proposals_are_deduplicated():
    prop = ScriptedProposer([f"INSTRUCTION: variant {k % 3}" for k in range(10)])
    out = propose_instructions(prop, CTX, 5, "seed")
    assert len(out) == 6 and len(set(out)) == 6
    assert out[:4] == ["seed", "variant 0", "variant 1", "variant 2"]


def test_templated_proposer_gives_exact_count():
    prop = ScriptedProposer([f"Template instruction {k}" for k in range(7)])
    out = propose_instructions(prop, CTX, 4, "seed")
    assert out == ["seed"] + [f"Template instruction {k}" for k in range(4)]


class DeadProposer:
    def complete(self, *a, **k):
        raise UnavailableError("proposer down")


def test_failing_proposer_keeps_seed():
    warnings = []
    assert propose_instructions(DeadProposer(), CTX, 3, "seed", warnings=warnings) == ["seed"]
    assert len(warnings) == 1


def test_demo_inputs_reach_proposer_prompt(train):
    pool = DemoPool(0, tuple(Demonstration(f"unique-input-{k}", "o", f"d{k}") for k in range(3)), 1.0)
    ctx = build_context(SEED, train, pool)
    text = render_proposer_prompt(ctx, "seed", 0)
    for k in range(3):
        assert f"unique-input-{k}" in text
    assert "unique-input" in text and "training examples" in text


def _hist(scores, configs=None):
    configs = configs or [((0, 0),)] * len(scores)
    return [TrialRecord(t=k + 1, score=s, indices=c) for k, (s, c) in enumerate(zip(scores, configs))]


def test_tpe_good_set_by_quantile():
    m = tpe_fit(_hist([0.9, 0.1, 0.8, 0.2]), 0.5, (2, 2))
    assert m.good_trials == (0, 2)


def test_tpe_ties_go_to_earliest():
    m = tpe_fit(_hist([0.5] * 5), 0.5, (2, 2))
    assert m.good_trials == (0, 1, 2)


def test_tpe_single_trial():
    m = tpe_fit(_hist([0.3]), 0.2, (2, 3))
    assert m.n_good == 1 and m.n_bad == 0
    assert [m.g(1, c) for c in range(3)] == [Fraction(1, 3)] * 3


def test_empty_model_draws_uniformly():
    space = CandidateSpace(((None, "a", "b"),), (((), (), ()),))
    model = tpe_fit([], 0.2, space.slot_sizes)
    assert tpe_acquire(model, space, random.Random(0)) == tpe_acquire(model, space, random.Random(0))
    draws = {tpe_acquire(model, space, random.Random(s)) for s in range(50)}
    assert len(draws) > 3


def test_instruction_only_in_good_trials_is_selected():
    space = CandidateSpace(((None, "b"),), (((), ()),))
    configs = [((1, 0),), ((0, 0),), ((0, 1),), ((0, 0),)]
    model = tpe_fit(_hist([0.9, 0.2, 0.3, 0.1], configs), 0.25, space.slot_sizes)
    # by hand: ell(instr=1) = (1+1)/(1+2), g(instr=1) = (0+1)/(3+2) -> ratio 10/3 vs 5/12
    assert model.ell(0, 1) / model.g(0, 1) == pytest.approx(10 / 3)
    assert model.ell(0, 0) / model.g(0, 0) == pytest.approx(5 / 12)
    assert tpe_acquire(model, space, random.Random(0))[0][0] == 1


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=2, max_size=4),
       st.lists(st.tuples(st.floats(0, 1), st.integers(0, 10**6)), min_size=1, max_size=12),
       st.sampled_from([0.2, 0.5, 0.7]))
def test_acquisition_equals_brute_force(sizes, hist, gamma):
    if len(sizes) % 2:
        sizes = sizes + [1]
    space = CandidateSpace(tuple(tuple([None] + [f"i{k}" for k in range(1, n)]) for n in sizes[0::2]),
                           tuple(tuple(() for _ in range(n)) for n in sizes[1::2]))
    configs = list(space.configs())
    history = [TrialRecord(t=k, score=s, indices=configs[r % len(configs)])
               for k, (s, r) in enumerate(hist)]
    model = tpe_fit(history, gamma, space.slot_sizes)
    best = max(model.ratio(c) for c in configs)
    oracle = next(c for c in configs if model.ratio(c) == best)
    assert tpe_acquire(model, space, random.Random(0)) == oracle


def _two_by_two(train):
    demos = tuple(Demonstration(e.input, e.target, e.id, "r") for e in train.examples[:2])
    return CandidateSpace(((None, "Think about units."),), (((), demos),))


def _brute_force_best(space, val, q_of):
    return max(oracle_J(val, space.assignment(c), q_of(c)) for c in space.configs())


def test_mipro_2x2_finds_global_optimum(train, val):
    space = _two_by_two(train)
    spec = SimulatedLMSpec(0.4, per_demo_bonus=0.05, instruction_bonus={"Think about units.": 0.1})
    lm = SimulatedLM(spec)

    def q_of(c):
        (ii, di), = c
        return 0.4 + 0.1 * ii + 0.05 * 2 * di

    oracle = _brute_force_best(space, val, q_of)
    res = mipro_optimize(SEED, lm, None, train, val, MIPROParams(T=20, B=len(val), E=5, rng_seed=1),
                         space=space)
    assert res.best_score == oracle
    assert oracle_J(val, res.best_assignment, q_of(tuple(map(tuple, res.extra["incumbent_config"])))) == oracle


def test_mipro_T0_returns_seed(train, val):
    space = _two_by_two(train)
    res = mipro_optimize(SEED, SimulatedLM(), None, train, val, MIPROParams(T=0, B=4), space=space)
    assert res.best_assignment == space.assignment(seed_config(space))
    assert res.trials == []


def test_tpe_steers_toward_bonus_instruction(train):
    val = make_split("val", 60, prefix="v")
    good = "Double-check the arithmetic."
    proposer = ScriptedProposer(["Answer quickly.", good, "Use a table.", "Be terse."])
    lm = SimulatedLM(SimulatedLMSpec(0.3, instruction_bonus={good: 0.5}))
    res = mipro_optimize(SEED, lm, proposer, train, val,
                         MIPROParams(T=40, B=20, E=5, n_instruction_candidates=4, K=2, rng_seed=0))
    instr = res.extra["space"]["instructions"][0]
    c = instr.index(good)
    last = [t.indices[0][0] for t in res.trials[-20:]]
    assert sum(i == c for i in last) >= 12
    assert res.best_assignment.instructions[0] == good


def test_mipro_end_to_end_with_proposer(train, val):
    proposer = ScriptedProposer([f"Instruction {k}" for k in range(5)])
    lm = SimulatedLM(SimulatedLMSpec(0.6, cot_bonus=0.1))
    res = mipro_optimize(SEED, lm, proposer, train, val, MIPROParams(T=6, B=6, E=3, K=2))
    assert len(res.trials) == 6
    assert res.extra["space"]["slot_sizes"][0] == 6
    assert len(res.extra["escalations"]) == 2
    assert res.best_assignment.method is Method.MIPROV2
    assert proposer.prompts and all("DATASET SUMMARY" in p for p in proposer.prompts)
