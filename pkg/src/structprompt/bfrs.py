"""Bootstrap Few-Shot with Random Search.

Demo pools are harvested by rejection sampling: the CoT seed program runs on
each training item and, when its answer scores at least ``tau``, the item's
(input, reasoning, output) trace joins the pool.  Random search then draws
``R`` K-subsets, scores each on a minibatch of the validation split and keeps
the best.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
from dataclasses import dataclass

from .backends import Backend, GenConfig
from .data import Split, require_not_test, score
from .errors import InvalidArgumentError, ParseError
from .harness import DEFAULT_PARALLELISM, evaluate_full, minibatch_estimate
from .program import DEFAULT_DEMO_CAP, Demonstration, Method, Program, PromptAssignment, parse_response, render_prompt
from .trials import OptimizationResult, TrialRecord

log = logging.getLogger(__name__)

EMPTY_POOL_WARNING = "empty demo pool: returning the zero-shot CoT assignment"


@dataclass(frozen=True)
class DemoPool:
    module_id: int
    demos: tuple[Demonstration, ...]
    tau: float

    def __len__(self) -> int:
        return len(self.demos)


@dataclass(frozen=True)
class BFRSParams:
    K: int = 3
    R: int = 16
    B: int = 50
    tau: float = 1.0
    rng_seed: int = 0
    full_reeval: bool = True
    # Enumerate every K-combination of the pool instead of sampling R of them.
    exhaustive: bool = False
    demo_cap: int = DEFAULT_DEMO_CAP

    def __post_init__(self) -> None:
        if self.R < 1:
            raise InvalidArgumentError("R must be >= 1")
        if self.B < 1:
            raise InvalidArgumentError("B must be >= 1")
        if not 0 <= self.K <= self.demo_cap:
            raise InvalidArgumentError(f"K must lie in [0, {self.demo_cap}]")
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidArgumentError("tau must lie in [0, 1]")


def cot_seed(program: Program) -> Program:
    return program.as_method(Method.ZERO_SHOT_COT)


def bootstrap_pools(seed_program: Program, backend: Backend, train: Split, tau: float = 1.0,
                    cfg: GenConfig | None = None) -> list[DemoPool]:
    """Run the seed program over ``train`` and keep traces scoring >= ``tau``.

    Pools follow train order.  All-rejected is not an error: the pools are
    simply empty.
    """
    require_not_test(train, "bootstrap_pools")
    if len(train) == 0:
        raise InvalidArgumentError("train split is empty")
    cfg = cfg or GenConfig()
    accepted: list[list[Demonstration]] = [[] for _ in seed_program.modules]
    for ex in train:
        prompt = render_prompt(seed_program, ex.input)
        completion = backend.complete(prompt, cfg, item=ex, program=seed_program)
        try:
            parsed = parse_response(completion.text, seed_program.method)
        except ParseError:
            continue
        if score(train.metric, parsed.output, ex, train.rel_tol) < tau:
            continue
        # single-stage programs: module input is the item input itself
        for i in range(len(seed_program.modules)):
            accepted[i].append(Demonstration(module_input=ex.input, reasoning=parsed.reasoning,
                                             module_output=parsed.output, source_example_id=ex.id))
    return [DemoPool(module_id=i, demos=tuple(d), tau=tau) for i, d in enumerate(accepted)]


def sample_k(pool: DemoPool, K: int, rng: random.Random) -> list[Demonstration]:
    """Draw ``min(K, len(pool))`` distinct demos uniformly, in draw order."""
    if K <= 0:
        return []
    return rng.sample(list(pool.demos), min(K, len(pool)))


def _assignment(seed_program: Program, demos: list[list[Demonstration]], cap: int) -> PromptAssignment:
    base = seed_program.assignment
    return PromptAssignment(method=Method.BFRS, instructions=base.instructions,
                            demos=tuple(tuple(s) for s in demos), demo_cap=cap)


def _candidates(pools: list[DemoPool], params: BFRSParams, rng: random.Random):
    if params.exhaustive:
        per_module = [list(itertools.combinations(p.demos, min(params.K, len(p)))) for p in pools]
        for combo in itertools.product(*per_module):
            yield [list(s) for s in combo]
    else:
        for _ in range(params.R):
            yield [sample_k(p, params.K, rng) for p in pools]


def bfrs_optimize(seed_program: Program, backend: Backend, train: Split, val: Split,
                  params: BFRSParams, cfg: GenConfig | None = None,
                  pools: list[DemoPool] | None = None,
                  parallelism: int = DEFAULT_PARALLELISM) -> OptimizationResult:
    """Random search over K-demo subsets with instructions held at their seeds.

    Each trial draws its own demo subset and then a fresh minibatch of size
    ``B`` from ``val``, both from one ``random.Random(rng_seed)`` stream.  The
    winner is the highest minibatch score, ties going to the earliest trial.
    """
    require_not_test(train, "bfrs_optimize")
    require_not_test(val, "bfrs_optimize")
    if len(val) == 0:
        raise InvalidArgumentError("validation split is empty")
    if params.B > len(val):
        raise InvalidArgumentError(f"B={params.B} exceeds |val|={len(val)}")
    cfg = cfg or GenConfig()
    seed = cot_seed(seed_program)
    if pools is None:
        pools = bootstrap_pools(seed, backend, train, params.tau, cfg)

    if params.K > 0 and all(len(p) == 0 for p in pools):
        log.warning(EMPTY_POOL_WARNING)
        report = evaluate_full(seed, backend, val, cfg, parallelism)
        return OptimizationResult(best_assignment=seed.assignment, best_score=report.J,
                                  trials=[], full_val_score=report.J,
                                  warnings=[EMPTY_POOL_WARNING])

    rng = random.Random(params.rng_seed)
    trials: list[TrialRecord] = []
    best: TrialRecord | None = None
    for t, demos in enumerate(_candidates(pools, params, rng)):
        assignment = _assignment(seed, demos, params.demo_cap)
        y = minibatch_estimate(seed.with_assignment(assignment), backend, val, params.B, rng,
                               cfg, parallelism)
        rec = TrialRecord(t=t, score=y, assignment=assignment)
        trials.append(rec)
        if best is None or y > best.score:
            best = rec

    assert best is not None and best.assignment is not None
    full = None
    if params.full_reeval:
        full = evaluate_full(seed.with_assignment(best.assignment), backend, val, cfg, parallelism).J
    return OptimizationResult(best_assignment=best.assignment, best_score=best.score,
                              trials=trials, full_val_score=full,
                              extra={"pool_sizes": [len(p) for p in pools]})


def hoeffding_bound(B: int, delta: float) -> float:
    """Half-width h with P(|J_B - J| > h) <= delta for scores in [0, 1]."""
    if B < 1:
        raise InvalidArgumentError("B must be >= 1")
    if not 0.0 < delta < 1.0:
        raise InvalidArgumentError("delta must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / delta) / (2.0 * B))
