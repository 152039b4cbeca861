"""Structured prompting for LM evaluation: programs, optimizers, harness and analysis."""

from ._version import __version__
from .backends import (Backend, Completion, GenConfig, OpenAIChatBackend, ScriptedProposer,
                       SimulatedLM, SimulatedLMSpec, backend_from_config, count_tokens)
from .bfrs import BFRSParams, DemoPool, bfrs_optimize, bootstrap_pools, hoeffding_bound, sample_k
from .data import Dataset, Example, Metric, Split, load_dataset, score, split
from .errors import (BackendError, ConfigError, InvalidArgumentError, LoadError, ParseError,
                     ProtocolError, QuarantineError, SplitError, StructPromptError, UnavailableError)
from .harness import (CostRecord, EvalReport, ResultGrid, bootstrap_ci, evaluate_full,
                      load_fixture_grid, minibatch_estimate, prompt_overhead, run_matrix)
from .leaderboard import (Selector, ceiling_delta, compute_ranks, detect_flips, leaderboard_rows,
                          macro_average, structured_gain_summary)
from .mipro import CandidateSpace, MIPROParams, mipro_optimize, propose_instructions
from .program import (Demonstration, Method, ModuleSpec, ParsedOutput, Program, PromptAssignment,
                      init_from_baseline, parse_response, render_prompt)
from .stability import (AnswerChannel, Distribution, check_dpi, check_pinsker, decision_margin,
                        kl_divergence, marginal_answer_dist, stability_verdict, tv_distance)
from .trials import OptimizationResult, TrialRecord

__all__ = [
    "__version__",
    "Backend",
    "Completion",
    "GenConfig",
    "OpenAIChatBackend",
    "ScriptedProposer",
    "SimulatedLM",
    "SimulatedLMSpec",
    "backend_from_config",
    "count_tokens",
    "BFRSParams",
    "DemoPool",
    "bfrs_optimize",
    "bootstrap_pools",
    "hoeffding_bound",
    "sample_k",
    "Dataset",
    "Example",
    "Metric",
    "Split",
    "load_dataset",
    "score",
    "split",
    "BackendError",
    "ConfigError",
    "InvalidArgumentError",
    "LoadError",
    "ParseError",
    "ProtocolError",
    "QuarantineError",
    "SplitError",
    "StructPromptError",
    "UnavailableError",
    "CostRecord",
    "EvalReport",
    "ResultGrid",
    "bootstrap_ci",
    "evaluate_full",
    "load_fixture_grid",
    "minibatch_estimate",
    "prompt_overhead",
    "run_matrix",
    "Selector",
    "ceiling_delta",
    "compute_ranks",
    "detect_flips",
    "leaderboard_rows",
    "macro_average",
    "structured_gain_summary",
    "CandidateSpace",
    "MIPROParams",
    "mipro_optimize",
    "propose_instructions",
    "Demonstration",
    "Method",
    "ModuleSpec",
    "ParsedOutput",
    "Program",
    "PromptAssignment",
    "init_from_baseline",
    "parse_response",
    "render_prompt",
    "AnswerChannel",
    "Distribution",
    "check_dpi",
    "check_pinsker",
    "decision_margin",
    "kl_divergence",
    "marginal_answer_dist",
    "stability_verdict",
    "tv_distance",
    "OptimizationResult",
    "TrialRecord",
]
