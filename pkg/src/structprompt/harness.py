"""Running programs over data: full and minibatch scores, bootstrap CIs,
prompt-token overheads and the model x method x benchmark run matrix."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from ._version import __version__
from .backends import Backend, GenConfig, Tokenizer, backend_from_config, count_tokens
from .data import Example, Split, load_dataset, score
from .errors import (BackendError, ConfigError, InvalidArgumentError, ParseError,
                     ProtocolError, StructPromptError, UnavailableError)
from .program import Method, Program, PromptAssignment, init_from_baseline, parse_response, render_prompt

log = logging.getLogger(__name__)

DEFAULT_PARALLELISM = 8
INVALID_FLAG_FRACTION = 0.20
BOOTSTRAP_RESAMPLES = 1000


@dataclass(frozen=True)
class ItemScore:
    example_id: str
    score: float
    prediction: str | None = None
    flagged: bool = False
    error: str | None = None


@dataclass
class EvalReport:
    items: list[ItemScore]
    J: float
    ci95: tuple[float, float]
    n: int
    flagged: int = 0
    valid: bool = True

    @property
    def scores(self) -> list[float]:
        return [it.score for it in self.items]

    def to_dict(self, per_item: bool = True) -> dict[str, Any]:
        d: dict[str, Any] = {"J": self.J, "ci95": list(self.ci95), "n": self.n,
                             "flagged": self.flagged, "valid": self.valid}
        if per_item:
            d["items"] = [{"id": it.example_id, "score": it.score, "flagged": it.flagged}
                          for it in self.items]
        return d


def _score_item(program: Program, backend: Backend, ex: Example, split: Split,
                cfg: GenConfig) -> ItemScore:
    prompt = render_prompt(program, ex.input)
    try:
        completion = backend.complete(prompt, cfg, item=ex, program=program)
    except (BackendError, UnavailableError, ProtocolError) as exc:
        log.warning("item %s failed: %s", ex.id, exc)
        return ItemScore(ex.id, 0.0, flagged=True, error=str(exc))
    try:
        parsed = parse_response(completion.text, program.method)
    except ParseError as exc:
        return ItemScore(ex.id, 0.0, error=str(exc))
    return ItemScore(ex.id, score(split.metric, parsed.output, ex, split.rel_tol), parsed.output)


def score_items(program: Program, backend: Backend, split: Split | Sequence[Example],
                cfg: GenConfig | None = None, parallelism: int = DEFAULT_PARALLELISM,
                metric_split: Split | None = None) -> list[ItemScore]:
    """Score each example; results come back in input order whatever the completion order."""
    cfg = cfg or GenConfig()
    examples = list(split)
    ref = split if isinstance(split, Split) else metric_split
    if ref is None:
        raise InvalidArgumentError("need a Split to know the metric")
    if parallelism <= 1 or len(examples) <= 1:
        return [_score_item(program, backend, ex, ref, cfg) for ex in examples]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda ex: _score_item(program, backend, ex, ref, cfg), examples))


def bootstrap_ci(scores: Sequence[float], level: float = 0.95,
                 resamples: int = BOOTSTRAP_RESAMPLES, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of ``scores``."""
    if len(scores) == 0:
        raise InvalidArgumentError("bootstrap_ci needs at least one score")
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError("level must lie in (0, 1)")
    if resamples < 100:
        raise InvalidArgumentError("use at least 100 resamples")
    x = np.asarray(scores, dtype=float)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(x), size=(resamples, len(x)))
    means = x[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def _report(items: list[ItemScore], seed: int) -> EvalReport:
    scores = [it.score for it in items]
    J = float(np.mean(scores))
    flagged = sum(it.flagged for it in items)
    return EvalReport(items=items, J=J, ci95=bootstrap_ci(scores, seed=seed), n=len(items),
                      flagged=flagged, valid=flagged <= INVALID_FLAG_FRACTION * len(items))


def evaluate_full(program: Program, backend: Backend, split: Split, cfg: GenConfig | None = None,
                  parallelism: int = DEFAULT_PARALLELISM, seed: int = 0) -> EvalReport:
    """Score every item of ``split``; J is the arithmetic mean of per-item scores."""
    if len(split) == 0:
        raise InvalidArgumentError("cannot evaluate on an empty split")
    return _report(score_items(program, backend, split, cfg, parallelism), seed)


def minibatch_estimate(program: Program, backend: Backend, val: Split, B: int,
                       rng: random.Random, cfg: GenConfig | None = None,
                       parallelism: int = DEFAULT_PARALLELISM) -> float:
    """Mean score over ``B`` val items drawn without replacement from ``rng``."""
    if not 1 <= B <= len(val):
        raise InvalidArgumentError(f"minibatch size {B} outside [1, {len(val)}]")
    batch = val.subset(sorted(rng.sample(range(len(val)), B)))
    return float(np.mean([it.score for it in score_items(program, backend, batch, cfg, parallelism)]))


# --------------------------------------------------------------------------- cost


@dataclass(frozen=True)
class CostRecord:
    method: Method
    additional_prompt_tokens: float
    macro_accuracy: float | None = None


def prompt_overhead(program: Program, baseline_program: Program, sample_items: Iterable[Example | str],
                    tokenizer: Tokenizer | None = None, macro_accuracy: float | None = None) -> CostRecord:
    """Mean extra prompt tokens of ``program`` over ``baseline_program`` on the same items."""
    diffs = []
    for item in sample_items:
        text = item.input if isinstance(item, Example) else str(item)
        diffs.append(count_tokens(render_prompt(program, text), tokenizer)
                     - count_tokens(render_prompt(baseline_program, text), tokenizer))
    if not diffs:
        raise InvalidArgumentError("need at least one sample item")
    return CostRecord(method=program.method, additional_prompt_tokens=float(np.mean(diffs)),
                      macro_accuracy=macro_accuracy)


# --------------------------------------------------------------------------- result grid


@dataclass(frozen=True)
class GridEntry:
    model_id: str
    method: Method
    benchmark: str
    score: float
    ci_halfwidth: float | None = None
    source_tag: str = "run"
    report: EvalReport | None = None


@dataclass
class ResultGrid:
    entries: dict[tuple[str, Method, str], GridEntry] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def add(self, entry: GridEntry) -> None:
        key = (entry.model_id, entry.method, entry.benchmark)
        if key in self.entries:
            raise InvalidArgumentError(f"duplicate grid cell {key}")
        self.entries[key] = entry

    def get(self, model_id: str, method: Method | str, benchmark: str) -> float | None:
        e = self.entries.get((model_id, Method.parse(method), benchmark))
        return None if e is None else e.score

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def models(self) -> list[str]:
        return sorted({k[0] for k in self.entries}, key=self._first_seen(0))

    @property
    def benchmarks(self) -> list[str]:
        return sorted({k[2] for k in self.entries}, key=self._first_seen(2))

    @property
    def methods(self) -> list[Method]:
        present = {k[1] for k in self.entries}
        return [m for m in Method if m in present]

    def _first_seen(self, pos: int) -> Callable[[str], int]:
        order: dict[str, int] = {}
        for k in self.entries:
            order.setdefault(k[pos], len(order))
        return order.__getitem__

    def to_dict(self) -> dict[str, Any]:
        cells = []
        for (model, method, bench), e in sorted(self.entries.items(),
                                                key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2])):
            cell: dict[str, Any] = {"model_id": model, "method": method.value, "benchmark": bench,
                                    "score": e.score, "ci_halfwidth": e.ci_halfwidth,
                                    "source_tag": e.source_tag}
            if e.report is not None:
                cell["report"] = e.report.to_dict()
            cells.append(cell)
        return {"meta": self.meta, "entries": cells, "errors": dict(sorted(self.errors.items()))}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> ResultGrid:
        grid = cls(meta=dict(d.get("meta", {})), errors=dict(d.get("errors", {})))
        for c in d["entries"]:
            grid.add(GridEntry(model_id=c["model_id"], method=Method.parse(c["method"]),
                               benchmark=c["benchmark"], score=float(c["score"]),
                               ci_halfwidth=c.get("ci_halfwidth"),
                               source_tag=c.get("source_tag", "run")))
        return grid

    @classmethod
    def load(cls, path: str | Path) -> ResultGrid:
        return cls.from_dict(json.loads(Path(path).read_text()))


FIXTURE_COLUMNS = ("model_id", "method", "benchmark", "score", "ci_halfwidth", "source_tag")


def load_fixture_grid(path: str | Path | None = None) -> ResultGrid:
    """Read a fixture CSV into a grid; ``None`` loads the bundled published tables."""
    if path is None:
        from importlib.resources import files
        text = files("structprompt").joinpath("data/published_scores.csv").read_text()
        source = "bundled:published_scores.csv"
    else:
        text = Path(path).read_text()
        source = str(path)
    reader = csv.DictReader(text.splitlines())
    missing = set(FIXTURE_COLUMNS[:4]) - set(reader.fieldnames or ())
    if missing:
        raise ConfigError(f"{source}: fixture CSV lacks columns {sorted(missing)}")
    grid = ResultGrid(meta={"source": source})
    for row in reader:
        try:
            method = Method.parse(row["method"])
        except InvalidArgumentError as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        hw = row.get("ci_halfwidth")
        grid.add(GridEntry(model_id=row["model_id"], method=method, benchmark=row["benchmark"],
                           score=float(row["score"]), ci_halfwidth=float(hw) if hw else None,
                           source_tag=row.get("source_tag") or "fixture"))
    return grid


def config_hash(config: Any) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def run_matrix(config: Mapping[str, Any], base_dir: str | Path = ".") -> ResultGrid:
    """Fill a result grid from a run config.

    Config keys: ``backends`` (list of backend blocks with an ``id``),
    ``methods``, ``datasets`` (blocks with ``name``, ``path``,
    ``baseline_instruction`` and optional metric settings), optional
    ``assignments`` mapping ``"<backend>/<method>/<dataset>"`` to a saved
    optimizer result, ``seed`` and ``parallelism``.  With ``fixtures`` set,
    the grid is read from that CSV and no backend is called.

    Only the test split is scored.  A cell that fails is left out and its
    error recorded under ``grid.errors``.
    """
    base_dir = Path(base_dir)
    seed = int(config.get("seed", 0))
    meta = {"config_hash": config_hash(config), "seed": seed, "tool_version": __version__}
    if config.get("fixtures"):
        grid = load_fixture_grid(base_dir / config["fixtures"])
        grid.meta.update(meta)
        return grid

    try:
        methods = [Method.parse(m) for m in config.get("methods", [])]
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc
    parallelism = int(config.get("parallelism", DEFAULT_PARALLELISM))
    backends = {}
    for b in config.get("backends", []):
        if "id" not in b:
            raise ConfigError("every backend block needs an 'id'")
        backends[str(b["id"])] = backend_from_config(b)
    datasets = []
    for d in config.get("datasets", []):
        if "path" not in d or "baseline_instruction" not in d:
            raise ConfigError("dataset blocks need 'path' and 'baseline_instruction'")
        ds_cfg = {k: v for k, v in d.items() if k not in ("path", "baseline_instruction")}
        datasets.append((load_dataset(base_dir / d["path"], ds_cfg), d["baseline_instruction"]))
    assignments = dict(config.get("assignments", {}))
    known = ({str(b["id"]) for b in config.get("backends", [])}, {m.value for m in methods},
             {ds.name for ds, _ in datasets})
    for key in assignments:
        parts = key.split("/")
        if len(parts) != 3 or any(p not in k for p, k in zip(parts, known)):
            raise ConfigError(f"assignment key {key!r} names an unknown backend, method or benchmark")

    grid = ResultGrid(meta=meta)
    for model_id, (backend, gen) in backends.items():
        for method in methods:
            for ds, baseline in datasets:
                key = f"{model_id}/{method.value}/{ds.name}"
                try:
                    program = init_from_baseline(baseline, method)
                    if not method.zero_shot:
                        if key not in assignments:
                            raise ConfigError(f"no optimized assignment for {key}")
                        saved = json.loads((base_dir / assignments[key]).read_text())
                        program = program.with_assignment(
                            PromptAssignment.from_dict(saved["best_assignment"]))
                    test = ds.test
                    report = evaluate_full(program, backend, test, gen, parallelism, seed)
                    if not report.valid:
                        raise StructPromptError(f"{report.flagged}/{report.n} items failed")
                    grid.add(GridEntry(model_id=model_id, method=method, benchmark=ds.name,
                                       score=report.J,
                                       ci_halfwidth=(report.ci95[1] - report.ci95[0]) / 2,
                                       source_tag="run", report=report))
                except StructPromptError as exc:
                    grid.errors[key] = f"{type(exc).__name__}: {exc}"
                    log.warning("cell %s failed: %s", key, exc)
    return grid
