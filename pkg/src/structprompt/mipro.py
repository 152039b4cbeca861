"""MIPROv2: joint instruction and demo-set search under a TPE surrogate.

The search space is categorical: each module contributes an instruction slot
(index 0 is the seed) and a demo-set slot (index 0 is the empty set, the rest
are K-subsets pre-sampled from the bootstrapped pool).  Trials are scored on
fresh minibatches; every ``E`` trials the best configurations by running mean
are re-scored on the full validation split and the incumbent is updated.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .backends import Backend, GenConfig
from .bfrs import bootstrap_pools, cot_seed, sample_k, DemoPool
from .data import Split, require_not_test
from .errors import InvalidArgumentError, StructPromptError
from .harness import DEFAULT_PARALLELISM, evaluate_full, minibatch_estimate
from .program import (DEFAULT_DEMO_CAP, Demonstration, Method, Program, PromptAssignment,
                      default_objective)
from .trials import OptimizationResult, TrialRecord

log = logging.getLogger(__name__)

Config = tuple[tuple[int, int], ...]

PROPOSAL_TIPS = (
    "",
    "Keep the instruction short and direct.",
    "Be creative and frame the task vividly.",
    "Stress careful step-by-step reasoning before answering.",
    "Adopt the persona of a domain expert.",
    "Point out the most common mistakes to avoid.",
)


# --------------------------------------------------------------------------- proposals


@dataclass(frozen=True)
class ProposalContext:
    dataset_summary: str
    program_description: str
    demos: tuple[Demonstration, ...] = ()
    history_tail: tuple[str, ...] = ()


def summarize_dataset(train: Split, n_examples: int = 3, max_chars: int = 300) -> str:
    lines = [f"{len(train)} training examples; metric {train.metric.value}."]
    for ex in train.examples[:n_examples]:
        lines.append(f"- input: {ex.input[:max_chars]}")
        lines.append(f"  target: {ex.target[:max_chars]}")
    hist = Counter(ex.target for ex in train)
    top = ", ".join(f"{label!r}: {n}" for label, n in hist.most_common(10))
    lines.append(f"Label histogram (top 10): {top}")
    return "\n".join(lines)


def describe_program(program: Program) -> str:
    parts = []
    for m in program.modules:
        fields = m.rendered_output_fields(program.method)
        parts.append(f"Module {m.id}: inputs {list(m.input_field_names)} -> outputs {list(fields)}; "
                     f"task text: {m.seed_instruction}")
    return "\n".join(parts)


def build_context(program: Program, train: Split, pool: DemoPool | None = None,
                  history: Sequence[TrialRecord] = (), n_demos: int = 3,
                  n_history: int = 5) -> ProposalContext:
    demos = tuple(pool.demos[:n_demos]) if pool is not None else ()
    tail = tuple(f"trial {r.t}: config {list(map(list, r.indices or ()))} scored {r.score:.3f}"
                 for r in list(history)[-n_history:])
    return ProposalContext(dataset_summary=summarize_dataset(train),
                           program_description=describe_program(program),
                           demos=demos, history_tail=tail)


def render_proposer_prompt(ctx: ProposalContext, seed_instruction: str, attempt: int) -> str:
    tip = PROPOSAL_TIPS[attempt % len(PROPOSAL_TIPS)]
    lines = [
        "You write instructions for a language model program.",
        "",
        "DATASET SUMMARY:",
        ctx.dataset_summary,
        "",
        "PROGRAM:",
        ctx.program_description,
        "",
        f"CURRENT INSTRUCTION: {seed_instruction}",
    ]
    if ctx.demos:
        lines += ["", "EXAMPLE DEMONSTRATIONS:"]
        for d in ctx.demos:
            lines.append(f"INPUTS: {d.module_input} -> OUTPUT: {d.module_output}")
    if ctx.history_tail:
        lines += ["", "RECENT TRIALS:", *ctx.history_tail]
    lines += ["", f"PROPOSAL #{attempt + 1}."]
    if tip:
        lines.append(f"TIP: {tip}")
    lines.append("Reply with one improved instruction only, prefixed by \"INSTRUCTION:\".")
    return "\n".join(lines)


def _clean_proposal(text: str) -> str:
    t = text.strip()
    if t.upper().startswith("INSTRUCTION:"):
        t = t[len("INSTRUCTION:"):].strip()
    return t


def propose_instructions(proposer: Backend, ctx: ProposalContext, T_i: int, seed_instruction: str,
                         cfg: GenConfig | None = None, retry_cap: int = 3,
                         warnings: list[str] | None = None) -> list[str]:
    """Seed instruction followed by ``T_i`` distinct proposals.

    Duplicates are resampled (each attempt varies the proposal number and tip)
    up to ``retry_cap`` extra rounds; any shortfall is padded with numbered
    variants of the seed.  A failing proposer yields ``[seed_instruction]``.
    """
    if T_i < 0:
        raise InvalidArgumentError("T_i must be >= 0")
    cfg = cfg or GenConfig()
    out = [seed_instruction]
    seen = {seed_instruction.strip().casefold()}
    max_attempts = T_i * (1 + retry_cap)
    attempt = 0
    try:
        while len(out) < T_i + 1 and attempt < max_attempts:
            text = _clean_proposal(proposer.complete(render_proposer_prompt(ctx, seed_instruction, attempt),
                                                     cfg).text)
            attempt += 1
            key = text.casefold()
            if text and key not in seen:
                seen.add(key)
                out.append(text)
    except StructPromptError as exc:
        msg = f"proposer failed ({exc}); using the seed instruction only"
        log.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return [seed_instruction]
    j = 1
    while len(out) < T_i + 1:
        variant = f"{seed_instruction} (variant {j})"
        j += 1
        if variant.casefold() not in seen:
            seen.add(variant.casefold())
            out.append(variant)
    return out


# --------------------------------------------------------------------------- search space


@dataclass(frozen=True)
class CandidateSpace:
    """Finite categorical space.  ``instructions[i][0]`` is the seed (``None``
    standing for the module's default objective) and ``demo_sets[i][0]`` is empty."""

    instructions: tuple[tuple[str | None, ...], ...]
    demo_sets: tuple[tuple[tuple[Demonstration, ...], ...], ...]

    def __post_init__(self) -> None:
        if len(self.instructions) != len(self.demo_sets):
            raise InvalidArgumentError("instruction and demo-set lists must cover the same modules")
        if any(len(x) == 0 for x in self.instructions) or any(len(x) == 0 for x in self.demo_sets):
            raise InvalidArgumentError("every candidate list must be nonempty")

    @property
    def num_modules(self) -> int:
        return len(self.instructions)

    @property
    def slot_sizes(self) -> tuple[int, ...]:
        sizes: list[int] = []
        for ins, ds in zip(self.instructions, self.demo_sets):
            sizes += [len(ins), len(ds)]
        return tuple(sizes)

    @property
    def size(self) -> int:
        return math.prod(self.slot_sizes)

    def configs(self):
        """Every configuration, in lexicographic order of slot indices."""
        for flat in itertools.product(*(range(n) for n in self.slot_sizes)):
            yield unflatten(flat)

    def contains(self, config: Config) -> bool:
        flat = flatten(config)
        return len(flat) == len(self.slot_sizes) and all(
            0 <= c < n for c, n in zip(flat, self.slot_sizes))

    def assignment(self, config: Config, method: Method = Method.MIPROV2,
                   demo_cap: int = DEFAULT_DEMO_CAP) -> PromptAssignment:
        if not self.contains(config):
            raise InvalidArgumentError(f"config {config} outside the space")
        return PromptAssignment(
            method=method,
            instructions=tuple(self.instructions[i][ii] for i, (ii, _) in enumerate(config)),
            demos=tuple(self.demo_sets[i][di] for i, (_, di) in enumerate(config)),
            demo_cap=demo_cap,
        )


def flatten(config: Config) -> tuple[int, ...]:
    return tuple(x for pair in config for x in pair)


def unflatten(flat: Sequence[int]) -> Config:
    return tuple((flat[k], flat[k + 1]) for k in range(0, len(flat), 2))


def seed_config(space: CandidateSpace) -> Config:
    return ((0, 0),) * space.num_modules


def build_demo_sets(pool: DemoPool, K: int, n_sets: int, rng: random.Random) -> tuple[tuple[Demonstration, ...], ...]:
    """Empty set plus up to ``n_sets`` distinct K-subsets drawn from ``pool``."""
    sets: list[tuple[Demonstration, ...]] = [()]
    seen = {()}
    if K > 0 and len(pool) > 0:
        for _ in range(n_sets * 4):
            if len(sets) > n_sets:
                break
            s = tuple(sample_k(pool, K, rng))
            key = tuple(d.source_example_id for d in s)
            if key not in seen:
                seen.add(key)
                sets.append(s)
    return tuple(sets)


# --------------------------------------------------------------------------- TPE


@dataclass(frozen=True)
class TPEModel:
    """Per-slot categorical densities with add-one smoothing.

    ``good`` holds the top-gamma trials (by score); ``ell`` is fitted on them and
    ``g`` on the rest, so maximising ell/g favours what has scored well.
    """

    gamma: float
    slot_sizes: tuple[int, ...]
    good_counts: tuple[tuple[int, ...], ...]
    bad_counts: tuple[tuple[int, ...], ...]
    n_good: int
    n_bad: int
    good_trials: tuple[int, ...] = ()

    @property
    def is_empty(self) -> bool:
        return self.n_good == 0 and self.n_bad == 0

    def ell(self, slot: int, choice: int) -> Fraction:
        return Fraction(self.good_counts[slot][choice] + 1, self.n_good + self.slot_sizes[slot])

    def g(self, slot: int, choice: int) -> Fraction:
        return Fraction(self.bad_counts[slot][choice] + 1, self.n_bad + self.slot_sizes[slot])

    def ratio(self, config: Config) -> Fraction:
        r = Fraction(1)
        for s, c in enumerate(flatten(config)):
            r *= self.ell(s, c) / self.g(s, c)
        return r


def tpe_fit(history: Sequence[TrialRecord], gamma: float, slot_sizes: Sequence[int]) -> TPEModel:
    """Split the history at the gamma quantile and count slot choices on each side.

    The good set is the ``ceil(gamma * n)`` (at least one) highest-scoring
    trials, earlier trials winning ties.
    """
    if not 0.0 < gamma < 1.0:
        raise InvalidArgumentError("gamma must lie in (0, 1)")
    sizes = tuple(slot_sizes)
    zeros = tuple((0,) * n for n in sizes)
    if not history:
        return TPEModel(gamma, sizes, zeros, zeros, 0, 0)
    n_good = max(1, math.ceil(gamma * len(history)))
    ranked = sorted(range(len(history)), key=lambda k: (-history[k].score, k))
    good = set(ranked[:n_good])
    gc = [[0] * n for n in sizes]
    bc = [[0] * n for n in sizes]
    for k, rec in enumerate(history):
        if rec.indices is None:
            raise InvalidArgumentError("TPE needs trials with slot indices")
        target = gc if k in good else bc
        for s, c in enumerate(flatten(rec.indices)):
            target[s][c] += 1
    return TPEModel(gamma, sizes, tuple(map(tuple, gc)), tuple(map(tuple, bc)),
                    n_good, len(history) - n_good, tuple(sorted(good)))


def tpe_acquire(model: TPEModel, space: CandidateSpace, rng: random.Random) -> Config:
    """Exact argmax of prod ell/g over the space; uniform draw when the model is empty.

    The ratio factorises over slots, so the joint argmax is the per-slot argmax;
    taking the lowest index on ties gives the lexicographically smallest
    maximiser.  Ratios are exact rationals, so ties are exact.
    """
    sizes = space.slot_sizes
    if model.is_empty:
        return unflatten([rng.randrange(n) for n in sizes])
    best = []
    for s, n in enumerate(sizes):
        scores = [model.ell(s, c) / model.g(s, c) for c in range(n)]
        best.append(scores.index(max(scores)))
    return unflatten(best)


# --------------------------------------------------------------------------- optimizer


@dataclass(frozen=True)
class MIPROParams:
    T: int = 20
    B: int = 50
    E: int = 5
    top_k_escalate: int = 3
    gamma: float = 0.2
    n_instruction_candidates: int = 5
    n_demoset_candidates: int = 5
    K: int = 3
    tau: float = 1.0
    n_startup: int = 4
    rng_seed: int = 0
    demo_cap: int = DEFAULT_DEMO_CAP

    def __post_init__(self) -> None:
        if self.T < 0:
            raise InvalidArgumentError("T must be >= 0")
        if self.E < 1 or self.B < 1 or self.top_k_escalate < 1:
            raise InvalidArgumentError("E, B and top_k_escalate must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgumentError("gamma must lie in (0, 1)")
        if not 0 <= self.K <= self.demo_cap:
            raise InvalidArgumentError(f"K must lie in [0, {self.demo_cap}]")


def build_space(seed_program: Program, backend: Backend, proposer: Backend, train: Split,
                params: MIPROParams, rng: random.Random, cfg: GenConfig | None = None,
                proposer_cfg: GenConfig | None = None,
                warnings: list[str] | None = None) -> tuple[CandidateSpace, list[DemoPool]]:
    cfg = cfg or GenConfig()
    seed = cot_seed(seed_program)
    pools = bootstrap_pools(seed, backend, train, params.tau, cfg)
    instructions, demo_sets = [], []
    for i, module in enumerate(seed.modules):
        ctx = build_context(seed, train, pools[i])
        proposed = propose_instructions(proposer, ctx, params.n_instruction_candidates,
                                        default_objective(module), proposer_cfg or cfg,
                                        warnings=warnings)
        # index 0 keeps the seed's own (default) objective
        instructions.append((seed.assignment.instructions[i], *proposed[1:]))
        demo_sets.append(build_demo_sets(pools[i], params.K, params.n_demoset_candidates, rng))
    return CandidateSpace(tuple(instructions), tuple(demo_sets)), pools


def _startup_config(space: CandidateSpace, tried: set, rng: random.Random) -> Config:
    if space.size <= 10**6:
        untried = [c for c in space.configs() if c not in tried]
        if untried:
            return untried[rng.randrange(len(untried))]
    return unflatten([rng.randrange(n) for n in space.slot_sizes])


def mipro_optimize(seed_program: Program, backend: Backend, proposer: Backend | None,
                   train: Split, val: Split, params: MIPROParams, cfg: GenConfig | None = None,
                   space: CandidateSpace | None = None,
                   parallelism: int = DEFAULT_PARALLELISM) -> OptimizationResult:
    """Run the TPE-guided search and return the best fully-evaluated configuration.

    The first ``n_startup`` trials draw distinct configurations at random;
    later ones fit TPE on the history and take its acquisition argmax.  The
    incumbent starts as the seed configuration with its full-val score and
    only moves on a strictly better full-val score.
    """
    require_not_test(train, "mipro_optimize")
    require_not_test(val, "mipro_optimize")
    if len(val) == 0:
        raise InvalidArgumentError("validation split is empty")
    if params.B > len(val):
        raise InvalidArgumentError(f"B={params.B} exceeds |val|={len(val)}")
    cfg = cfg or GenConfig()
    rng = random.Random(params.rng_seed)
    warnings: list[str] = []
    base = cot_seed(seed_program)
    if space is None:
        if proposer is None:
            raise InvalidArgumentError("need a proposer backend or a prebuilt space")
        space, _ = build_space(seed_program, backend, proposer, train, params, rng, cfg,
                               warnings=warnings)

    def program_for(config: Config) -> Program:
        return base.with_assignment(space.assignment(config, Method.MIPROV2, params.demo_cap))

    full_cache: dict[Config, float] = {}

    def full_score(config: Config) -> float:
        if config not in full_cache:
            full_cache[config] = evaluate_full(program_for(config), backend, val, cfg, parallelism).J
        return full_cache[config]

    inc_config = seed_config(space)
    inc_score = full_score(inc_config)
    history: list[TrialRecord] = []
    totals: dict[Config, list[float]] = defaultdict(lambda: [0.0, 0])
    first_seen: dict[Config, int] = {}
    events: list[dict] = []

    def escalate(t: int) -> None:
        nonlocal inc_config, inc_score
        ranked = sorted(totals, key=lambda c: (-totals[c][0] / totals[c][1], first_seen[c]))
        evaluated = []
        for c in ranked[:params.top_k_escalate]:
            j = full_score(c)
            evaluated.append({"config": [list(p) for p in c], "J": j})
            if j > inc_score:
                inc_config, inc_score = c, j
        events.append({"t": t, "evaluated": evaluated, "incumbent_J": inc_score,
                       "incumbent": [list(p) for p in inc_config]})

    tried: set = set()
    for t in range(1, params.T + 1):
        if t <= params.n_startup:
            config = _startup_config(space, tried, rng)
        else:
            model = tpe_fit(history, params.gamma, space.slot_sizes)
            config = tpe_acquire(model, space, rng)
        tried.add(config)
        y = minibatch_estimate(program_for(config), backend, val, params.B, rng, cfg, parallelism)
        history.append(TrialRecord(t=t, score=y, indices=config))
        acc = totals[config]
        acc[0] += y
        acc[1] += 1
        first_seen.setdefault(config, t)
        if t % params.E == 0:
            escalate(t)
    if history and params.T % params.E != 0:
        escalate(params.T)

    return OptimizationResult(
        best_assignment=space.assignment(inc_config, Method.MIPROV2, params.demo_cap),
        best_score=inc_score, trials=history, full_val_score=inc_score, warnings=warnings,
        extra={"incumbent_config": [list(p) for p in inc_config], "escalations": events,
               "space": {"slot_sizes": list(space.slot_sizes),
                         "instructions": [[x if x is not None else default_objective(m)
                                           for x in ins]
                                          for ins, m in zip(space.instructions, base.modules)]}},
    )
