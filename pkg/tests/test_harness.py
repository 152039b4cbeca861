import json
import random

import numpy as np
import pytest

from structprompt.backends import SimulatedLM, SimulatedLMSpec
from structprompt.data import Split
from structprompt.errors import ConfigError, InvalidArgumentError, UnavailableError
from structprompt.harness import (ResultGrid, bootstrap_ci, evaluate_full, load_fixture_grid,
                                  minibatch_estimate, prompt_overhead, run_matrix)
from structprompt.program import Demonstration, Method, PromptAssignment, init_from_baseline

from conftest import make_split, oracle_J


def test_q1_gives_perfect_score():
    prog = init_from_baseline("Add.", "cot")
    rep = evaluate_full(prog, SimulatedLM(SimulatedLMSpec(1.0)), make_split("val", 10))
    assert rep.J == 1.0 and rep.valid


def test_J_matches_predicate_frequency():
    split = make_split("val", 9)
    prog = init_from_baseline("Add.", "cot")
    lm = SimulatedLM(SimulatedLMSpec(0.5, global_seed=11))
    rep = evaluate_full(prog, lm, split, parallelism=4)
    assert rep.J == oracle_J(split, prog.assignment, 0.5, 11)
    assert [i.example_id for i in rep.items] == split.ids


def test_empty_split_rejected():
    with pytest.raises(InvalidArgumentError):
        evaluate_full(init_from_baseline("A", "cot"), SimulatedLM(), Split("val", ()))


def test_minibatch_full_batch_equals_full_eval():
    split = make_split("val", 15)
    prog = init_from_baseline("Add.", "cot")
    lm = SimulatedLM(SimulatedLMSpec(0.5))
    assert minibatch_estimate(prog, lm, split, 15, random.Random(1)) == evaluate_full(prog, lm, split).J


def test_minibatch_of_one():
    split = make_split("val", 15)
    prog = init_from_baseline("Add.", "cot")
    lm = SimulatedLM(SimulatedLMSpec(0.5))
    k = random.Random(4).sample(range(15), 1)[0]
    expected = float(lm.is_correct(split.examples[k].id, prog.assignment))
    assert minibatch_estimate(prog, lm, split, 1, random.Random(4)) == expected


def test_minibatch_unbiased():
    split = make_split("val", 100)
    prog = init_from_baseline("Add.", "cot")
    lm = SimulatedLM(SimulatedLMSpec(0.5))
    J = oracle_J(split, prog.assignment, 0.5)
    est = [minibatch_estimate(prog, lm, split, 10, random.Random(s), parallelism=1) for s in range(200)]
    assert abs(np.mean(est) - J) <= 0.03


def test_bootstrap_degenerate():
    assert bootstrap_ci([0.7] * 20) == pytest.approx((0.7, 0.7))


def test_bootstrap_contains_mean():
    rng = np.random.default_rng(0)
    for k in range(100):
        x = (rng.random(int(rng.integers(5, 60))) < rng.random()).astype(float)
        lo, hi = bootstrap_ci(x, seed=k)
        assert lo - 1e-12 <= x.mean() <= hi + 1e-12


def test_bootstrap_halfwidth_near_normal_approx():
    x = [1.0] * 800 + [0.0] * 200
    lo, hi = bootstrap_ci(x, level=0.95, resamples=1000, seed=0)
    assert 0.019 <= (hi - lo) / 2 <= 0.031


class FlakyBackend:
    def __init__(self, failing):
        self.inner = SimulatedLM(SimulatedLMSpec(1.0))
        self.failing = failing

    def complete(self, prompt, cfg, *, item=None, program=None):
        if item.id in self.failing:
            raise UnavailableError("down")
        return self.inner.complete(prompt, cfg, item=item, program=program)


def test_failed_items_flagged_and_zero():
    split = make_split("val", 10)
    rep = evaluate_full(init_from_baseline("A", "cot"), FlakyBackend({"x0", "x1"}), split)
    assert rep.flagged == 2 and rep.valid and rep.J == 0.8
    rep = evaluate_full(init_from_baseline("A", "cot"), FlakyBackend({f"x{k}" for k in range(3)}), split)
    assert not rep.valid


def _bfrs_program(demo_words=150):
    demos = tuple(Demonstration("word " * demo_words, "42", f"d{k}", "because " * 20) for k in range(3))
    return init_from_baseline("Answer the question.", "cot").with_assignment(
        PromptAssignment(Method.BFRS, (None,), (demos,)))


def test_prompt_overhead_ordering():
    items = make_split("test", 5).examples
    base = init_from_baseline("Answer the question.", "baseline")
    costs = {m: prompt_overhead(init_from_baseline("Answer the question.", m), base, items)
             .additional_prompt_tokens for m in ("baseline", "predict", "cot")}
    assert costs["baseline"] == 0
    assert costs["baseline"] < costs["predict"] < costs["cot"]
    bfrs = prompt_overhead(_bfrs_program(), base, items).additional_prompt_tokens
    assert bfrs >= 5 * costs["cot"]


def _matrix_setup(tmp_path):
    rows = [{"id": f"e{k}", "input": f"{k}+{k}", "target": str(2 * k),
             **({"split": "test"} if k < 6 else {})} for k in range(20)]
    (tmp_path / "arith.jsonl").write_text("\n".join(json.dumps(r) for r in rows))
    return {"seed": 1, "backends": [{"id": "sim", "kind": "simulated", "base_accuracy": 0.5}],
            "methods": ["ZeroShotPredict", "ZeroShotCoT"],
            "datasets": [{"name": "arith", "path": "arith.jsonl", "baseline_instruction": "Add."}]}


def test_run_matrix_two_methods(tmp_path):
    grid = run_matrix(_matrix_setup(tmp_path), tmp_path)
    assert len(grid) == 2 and not grid.errors
    e = grid.entries[("sim", Method.ZERO_SHOT_COT, "arith")]
    assert e.report.n == 6


def test_run_matrix_byte_identical(tmp_path):
    cfg = _matrix_setup(tmp_path)
    run_matrix(cfg, tmp_path).save(tmp_path / "a.json")
    run_matrix(cfg, tmp_path).save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert ResultGrid.load(tmp_path / "a.json").get("sim", "cot", "arith") is not None


def test_run_matrix_missing_assignment_recorded(tmp_path):
    cfg = _matrix_setup(tmp_path)
    cfg["methods"].append("BFRS")
    grid = run_matrix(cfg, tmp_path)
    assert len(grid) == 2 and "sim/BFRS/arith" in grid.errors


def test_run_matrix_rejects_unknown_assignment_key(tmp_path):
    cfg = _matrix_setup(tmp_path)
    cfg["assignments"] = {"sim/BFRS/nope": "x.json"}
    with pytest.raises(ConfigError):
        run_matrix(cfg, tmp_path)


def test_fixture_grid_needs_no_backend():
    grid = load_fixture_grid()
    assert len(grid) == 4 * 5 * 7
    assert grid.get("claude-3.7-sonnet", "HelmBaseline", "MMLU-Pro") == 76.3
