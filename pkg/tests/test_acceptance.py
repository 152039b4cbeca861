"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (visible even without ``-s``).
"""

import itertools
import math
import random
import time

import numpy as np
import pytest

from structprompt.backends import SimulatedLM, SimulatedLMSpec, count_tokens
from structprompt.bfrs import BFRSParams, bfrs_optimize, bootstrap_pools, cot_seed, hoeffding_bound
from structprompt.harness import load_fixture_grid, minibatch_estimate, prompt_overhead
from structprompt.leaderboard import (Selector, ceiling_deltas, compute_ranks, detect_flips,
                                      leaderboard_rows, structured_gain_summary)
from structprompt.mipro import CandidateSpace, MIPROParams, mipro_optimize
from structprompt.program import Demonstration, Method, PromptAssignment, init_from_baseline
from structprompt.stability import (AnswerChannel, Distribution, bernoulli_demo, check_dpi,
                                    check_pinsker, stability_verdict)

from conftest import make_split, oracle_J

MODELS = ["claude-3.7-sonnet", "gemini-2.0-flash", "gpt-4o", "o3-mini"]
TABLE2 = {
    "HelmBaseline": [(64.81, 22.6), (61.41, 23.8), (61.04, 23.9), (70.93, 19.7)],
    "ZeroShotPredict": [(65.10, 22.6), (61.69, 22.7), (59.69, 25.0), (73.24, 20.3)],
    "ZeroShotCoT": [(69.36, 18.8), (66.21, 20.9), (65.67, 22.5), (72.73, 19.7)],
    "BFRS": [(69.34, 19.0), (66.19, 21.2), (65.87, 22.9), (73.07, 19.7)],
    "MIPROv2": [(69.80, 19.0), (66.19, 21.1), (65.34, 23.0), (73.07, 19.6)],
}


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, detail
    return emit


def test_criterion_01_macro_table(report):
    t0 = time.perf_counter()
    grid = load_fixture_grid()
    rows = {(r.model_id, r.method.value): r for r in leaderboard_rows(grid)}
    worst = 0.0
    for method, cells in TABLE2.items():
        for model, (mean, std) in zip(MODELS, cells):
            r = rows[(model, method)]
            worst = max(worst, abs(r.macro_mean - mean), abs(r.macro_std - std))
    elapsed = time.perf_counter() - t0
    report(1, worst <= 0.05 and elapsed < 1.0,
           f"max |error| over 40 cells = {worst:.4f} (tol 0.05), runtime {elapsed:.3f}s (< 1s)")


def test_criterion_02_ceiling_deltas(report):
    d = ceiling_deltas(load_fixture_grid())
    want = dict(zip(MODELS, [4.99, 4.80, 4.83, 2.31]))
    worst = max(abs(d[m] - want[m]) for m in MODELS)
    report(2, worst <= 0.02, "deltas " + ", ".join(f"{d[m]:+.3f}" for m in MODELS)
           + f"; max error {worst:.4f} (tol 0.02)")


def test_criterion_03_headline_aggregates(report):
    g = structured_gain_summary(load_fixture_grid())
    ok = abs(g.avg_delta - 4.0) <= 0.1 and abs(g.avg_sigma_change + 1.9) <= 0.15
    report(3, ok, f"avg delta {g.avg_delta:.3f} (4.0±0.1), sigma change {g.avg_sigma_change:.3f} (-1.9±0.15)")


def test_criterion_04_ranks(report):
    grid = load_fixture_grid()
    base, ceil = compute_ranks(grid, Selector.BASELINE), compute_ranks(grid, Selector.STRUCTURED_CEILING)
    want_mean = {"o3-mini": (1.29, 1.57), "claude-3.7-sonnet": (2.29, 2.00),
                 "gpt-4o": (3.14, 3.00), "gemini-2.0-flash": (3.29, 3.43)}
    want_std = {"claude-3.7-sonnet": (0.95, 1.15), "gpt-4o": (0.90, 1.00),
                "gemini-2.0-flash": (0.76, 0.53), "o3-mini": (0.76, 0.79)}
    errs = []
    for m in MODELS:
        errs += [abs(base.mean_rank[m] - want_mean[m][0]), abs(ceil.mean_rank[m] - want_mean[m][1]),
                 abs(base.rank_std[m] - want_std[m][0]), abs(ceil.rank_std[m] - want_std[m][1])]
    report(4, max(errs) <= 0.01, f"16 rank statistics, max error {max(errs):.4f} (tol 0.01)")


def test_criterion_05_flips(report):
    flips = detect_flips(load_fixture_grid())
    got = {(f.benchmark, f.baseline_order, f.ceiling_order, f.baseline_scores, f.ceiling_scores)
           for f in flips}
    want = {
        ("MMLU-Pro", ("o3-mini", "claude-3.7-sonnet"), ("claude-3.7-sonnet", "o3-mini"),
         (77.1, 76.3), (78.4, 80.6)),
        ("GSM8K", ("gemini-2.0-flash", "gpt-4o"), ("gpt-4o", "gemini-2.0-flash"),
         (84.0, 81.1), (84.2, 90.7)),
        ("MedCalc-Bench", ("o3-mini", "claude-3.7-sonnet"), ("claude-3.7-sonnet", "o3-mini"),
         (34.0, 21.0), (34.7, 35.3)),
    }
    report(5, got == want, f"{len(flips)} flips: " + "; ".join(sorted(
        f"{b} {bo[0]}>{bo[1]} -> {co[0]}>{co[1]}" for b, bo, co, _, _ in got)))


def test_criterion_06_bfrs_brute_force(report):
    t0 = time.perf_counter()
    seed_prog = init_from_baseline("Add the numbers.", Method.BFRS)
    cot = cot_seed(seed_prog)
    mismatches = 0
    runs = 0
    for pool_size in (4, 5, 6):
        for sim_seed in range(4):
            train = make_split("train", pool_size, prefix=f"t{sim_seed}-")
            val = make_split("val", 30, prefix=f"v{sim_seed}-")
            pools = bootstrap_pools(cot, SimulatedLM(SimulatedLMSpec(1.0)), train)
            lm = SimulatedLM(SimulatedLMSpec(0.5, global_seed=sim_seed))
            res = bfrs_optimize(seed_prog, lm, train, val,
                                BFRSParams(K=2, B=len(val), exhaustive=True, rng_seed=sim_seed),
                                pools=pools, parallelism=1)
            oracle = max(oracle_J(val, PromptAssignment(Method.BFRS, (None,), (combo,)), 0.5, sim_seed)
                         for combo in itertools.combinations(pools[0].demos, 2))
            runs += 1
            mismatches += res.best_score != oracle or len(res.trials) != math.comb(pool_size, 2)
    elapsed = time.perf_counter() - t0
    report(6, mismatches == 0 and elapsed < 10.0,
           f"{runs - mismatches}/{runs} runs equal the brute-force max (pools 4-6, K=2, B=|val|), "
           f"runtime {elapsed:.2f}s (< 10s)")


def test_criterion_07_mipro_brute_force(report):
    t0 = time.perf_counter()
    seed_prog = init_from_baseline("Add the numbers.", Method.MIPROV2)
    train = make_split("train", 4, prefix="t")
    val = make_split("val", 20, prefix="v")
    demos = tuple(Demonstration(e.input, e.target, e.id, "r") for e in train.examples[:2])
    space = CandidateSpace(((None, "Think about units."),), (((), demos),))
    hits = 0
    for s in range(100):
        spec = SimulatedLMSpec(0.45, per_demo_bonus=0.03, instruction_bonus={"Think about units.": 0.05},
                               global_seed=s)

        def q_of(config):
            (ii, di), = config
            return 0.45 + 0.05 * ii + 0.03 * 2 * di

        oracle = max(oracle_J(val, space.assignment(c), q_of(c), s) for c in space.configs())
        res = mipro_optimize(seed_prog, SimulatedLM(spec), None, train, val,
                             MIPROParams(T=20, B=len(val), E=5, rng_seed=s), space=space, parallelism=1)
        hits += res.best_score == oracle
    elapsed = time.perf_counter() - t0
    report(7, hits >= 95 and elapsed < 60.0,
           f"incumbent = brute-force optimum in {hits}/100 seeded runs (need >= 95), runtime {elapsed:.2f}s (< 60s)")


def test_criterion_08_hoeffding(report):
    val = make_split("val", 200, prefix="v")
    prog = init_from_baseline("Add the numbers.", "cot")
    lm = SimulatedLM(SimulatedLMSpec(0.5))
    J = oracle_J(val, prog.assignment, 0.5)
    h = hoeffding_bound(25, 0.05)
    violations = sum(abs(minibatch_estimate(prog, lm, val, 25, random.Random(s), parallelism=1) - J) > h
                     for s in range(200))
    rate = violations / 200
    report(8, rate <= 0.08, f"violation rate {rate:.3f} of the delta=0.05 bound h={h:.4f} (need <= 0.08)")


def _dist(rng, k):
    return Distribution.of(list(rng.dirichlet(np.ones(k))))


def test_criterion_09_stability(report):
    rng = np.random.default_rng(2024)
    counterexamples = guaranteed = 0
    for _ in range(10_000):
        k = int(rng.integers(2, 7))
        P = _dist(rng, k)
        # mix toward P so that small perturbations (where guarantees fire) are common
        w = float(rng.random())
        q = w * np.asarray(P.probs) + (1 - w) * rng.dirichlet(np.ones(k))
        v = stability_verdict(P, Distribution.of(list(q / q.sum())))
        guaranteed += v.guaranteed_invariant
        counterexamples += v.guaranteed_invariant and not v.argmax_equal
    dpi_ok = pinsker_ok = 0
    for _ in range(1000):
        n, m = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        p, q = _dist(rng, n), _dist(rng, n)
        ch = AnswerChannel.from_matrix([list(rng.dirichlet(np.ones(m))) for _ in range(n)])
        dpi_ok += check_dpi(p, q, ch).holds
        pinsker_ok += check_pinsker(p, q, ch).holds
    demo = bernoulli_demo()
    ok = (counterexamples == 0 and guaranteed > 0 and dpi_ok == 1000 and pinsker_ok == 1000
          and abs(demo["kl"] - 0.02041) <= 1e-4 and abs(demo["bound"] - 0.10104) <= 1e-4)
    report(9, ok, f"{counterexamples} counterexamples in 10000 pairs ({guaranteed} guaranteed); "
                  f"DPI {dpi_ok}/1000, Pinsker {pinsker_ok}/1000; KL {demo['kl']:.5f}, bound {demo['bound']:.5f}")


def test_criterion_10_cost_ordering(report):
    instruction = "Answer the multiple-choice question with the letter of the correct option."
    items = make_split("test", 10, prefix="c").examples
    demos = tuple(Demonstration(
        module_input="A 54-year-old presents with chest pain radiating to the left arm. " * 7,
        module_output="B", source_example_id=f"d{k}",
        reasoning="The presentation is typical of an acute coronary syndrome. " * 3) for k in range(3))
    base = init_from_baseline(instruction, Method.HELM_BASELINE)
    cost = {m: prompt_overhead(init_from_baseline(instruction, m), base, items).additional_prompt_tokens
            for m in (Method.HELM_BASELINE, Method.ZERO_SHOT_PREDICT, Method.ZERO_SHOT_COT)}
    cost[Method.BFRS] = prompt_overhead(base.with_assignment(
        PromptAssignment(Method.BFRS, (None,), (demos,))), base, items).additional_prompt_tokens
    cost[Method.MIPROV2] = prompt_overhead(base.with_assignment(PromptAssignment(
        Method.MIPROV2, ("Read the vignette carefully, then pick the single best option.",), (demos,))),
        base, items).additional_prompt_tokens
    demo_tokens = min(count_tokens(d.module_input) for d in demos)
    cot = cost[Method.ZERO_SHOT_COT]
    ok = (demo_tokens >= 100
          and cost[Method.HELM_BASELINE] < cost[Method.ZERO_SHOT_PREDICT] < cot
          and cost[Method.BFRS] >= 5 * cot and cost[Method.MIPROV2] >= 5 * cot)
    report(10, ok, "extra tokens " + ", ".join(f"{m.value} {v:.0f}" for m, v in cost.items())
           + f" (demos >= {demo_tokens} tokens, K=3)")
