"""Leaderboard statistics over a result grid.

Macro-averages with sample standard deviation, ceiling deltas, the
structured-prompting gain summary, mean-rank stability and rank flips.
"""

from __future__ import annotations

import enum
import itertools
import statistics
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from scipy.stats import rankdata

from .errors import InvalidArgumentError
from .harness import ResultGrid
from .program import Method

STRUCTURED_METHODS = (Method.ZERO_SHOT_COT, Method.BFRS, Method.MIPROV2)
NON_BASELINE_METHODS = (Method.ZERO_SHOT_PREDICT,) + STRUCTURED_METHODS


class Selector(str, enum.Enum):
    BASELINE = "Baseline"
    STRUCTURED_CEILING = "StructuredCeiling"
    # best over every non-baseline method, Zero-Shot Predict included
    OVERALL_CEILING = "OverallCeiling"


def macro_average(scores: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; std is 0 for a single score."""
    if len(scores) == 0:
        raise InvalidArgumentError("macro_average of an empty list")
    mean = statistics.fmean(scores)
    std = statistics.stdev(scores) if len(scores) > 1 else 0.0
    return mean, std


@dataclass(frozen=True)
class LeaderboardRow:
    model_id: str
    method: Method
    scores: tuple[float, ...]
    macro_mean: float
    macro_std: float

    def to_dict(self) -> dict[str, Any]:
        return {"model_id": self.model_id, "method": self.method.value,
                "scores": list(self.scores), "macro_mean": self.macro_mean,
                "macro_std": self.macro_std}


def _cell(grid: ResultGrid, model: str, method: Method, bench: str) -> float:
    v = grid.get(model, method, bench)
    if v is None:
        raise InvalidArgumentError(f"missing cell ({model}, {method.value}, {bench})")
    return v


def leaderboard_rows(grid: ResultGrid, benchmarks: Sequence[str] | None = None) -> list[LeaderboardRow]:
    """One row per (model, method) present for every benchmark."""
    benchmarks = list(benchmarks or grid.benchmarks)
    rows = []
    for model in grid.models:
        for method in grid.methods:
            vals = [grid.get(model, method, b) for b in benchmarks]
            if any(v is None for v in vals):
                continue
            mean, std = macro_average(vals)
            rows.append(LeaderboardRow(model, method, tuple(vals), mean, std))
    return rows


def ceiling_delta(rows: Iterable[LeaderboardRow]) -> float:
    """Best non-baseline macro mean minus the baseline macro mean (one model)."""
    rows = list(rows)
    base = [r for r in rows if r.method is Method.HELM_BASELINE]
    others = [r for r in rows if r.method is not Method.HELM_BASELINE]
    if len(base) != 1:
        raise InvalidArgumentError("need exactly one HelmBaseline row")
    if not others:
        raise InvalidArgumentError("need at least one non-baseline row")
    if len({r.model_id for r in rows}) != 1:
        raise InvalidArgumentError("rows must belong to a single model")
    return max(r.macro_mean for r in others) - base[0].macro_mean


def ceiling_deltas(grid: ResultGrid) -> dict[str, float]:
    rows = leaderboard_rows(grid)
    return {m: ceiling_delta([r for r in rows if r.model_id == m]) for m in grid.models}


@dataclass(frozen=True)
class GainSummary:
    avg_delta: float
    avg_sigma_change: float
    per_model: dict[str, tuple[float, float]]


def structured_gain_summary(grid: ResultGrid) -> GainSummary:
    """Average over models of (mean of the three structured macro stats) - baseline."""
    rows = {(r.model_id, r.method): r for r in leaderboard_rows(grid)}
    per_model = {}
    for model in grid.models:
        needed = (Method.HELM_BASELINE,) + STRUCTURED_METHODS
        missing = [m.value for m in needed if (model, m) not in rows]
        if missing:
            raise InvalidArgumentError(f"{model}: missing complete rows for {missing}")
        base = rows[(model, Method.HELM_BASELINE)]
        structured = [rows[(model, m)] for m in STRUCTURED_METHODS]
        per_model[model] = (
            statistics.fmean(r.macro_mean for r in structured) - base.macro_mean,
            statistics.fmean(r.macro_std for r in structured) - base.macro_std,
        )
    if not per_model:
        raise InvalidArgumentError("grid has no models")
    return GainSummary(avg_delta=statistics.fmean(d for d, _ in per_model.values()),
                       avg_sigma_change=statistics.fmean(s for _, s in per_model.values()),
                       per_model=per_model)


def selected_score(grid: ResultGrid, model: str, bench: str, selector: Selector | str) -> float:
    selector = Selector(selector)
    if selector is Selector.BASELINE:
        return _cell(grid, model, Method.HELM_BASELINE, bench)
    methods = STRUCTURED_METHODS if selector is Selector.STRUCTURED_CEILING else NON_BASELINE_METHODS
    return max(_cell(grid, model, m, bench) for m in methods)


@dataclass(frozen=True)
class RankReport:
    selector: Selector
    models: tuple[str, ...]
    benchmarks: tuple[str, ...]
    # ranks[b][k] is model k's rank on benchmark b (1 = best, ties averaged)
    ranks: tuple[tuple[float, ...], ...]
    mean_rank: dict[str, float]
    rank_std: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return {"selector": self.selector.value, "models": list(self.models),
                "benchmarks": list(self.benchmarks),
                "ranks": [list(r) for r in self.ranks],
                "mean_rank": self.mean_rank, "rank_std": self.rank_std}


def compute_ranks(grid: ResultGrid, selector: Selector | str = Selector.BASELINE) -> RankReport:
    selector = Selector(selector)
    models, benchmarks = grid.models, grid.benchmarks
    ranks = []
    for b in benchmarks:
        scores = [selected_score(grid, m, b, selector) for m in models]
        ranks.append(tuple(float(r) for r in rankdata([-s for s in scores], method="average")))
    mean_rank, rank_std = {}, {}
    for k, m in enumerate(models):
        mean_rank[m], rank_std[m] = macro_average([r[k] for r in ranks])
    return RankReport(selector, tuple(models), tuple(benchmarks), tuple(ranks), mean_rank, rank_std)


@dataclass(frozen=True)
class Flip:
    benchmark: str
    model_pair: tuple[str, str]
    baseline_scores: tuple[float, float]
    ceiling_scores: tuple[float, float]

    @property
    def baseline_order(self) -> tuple[str, str]:
        a, b = self.model_pair
        return (a, b) if self.baseline_scores[0] > self.baseline_scores[1] else (b, a)

    @property
    def ceiling_order(self) -> tuple[str, str]:
        a, b = self.model_pair
        return (a, b) if self.ceiling_scores[0] > self.ceiling_scores[1] else (b, a)

    def to_dict(self) -> dict[str, Any]:
        return {"benchmark": self.benchmark, "model_pair": list(self.model_pair),
                "baseline_order": list(self.baseline_order), "ceiling_order": list(self.ceiling_order),
                "baseline_scores": list(self.baseline_scores),
                "ceiling_scores": list(self.ceiling_scores)}


def detect_flips(grid: ResultGrid, ceiling: Selector | str = Selector.OVERALL_CEILING) -> list[Flip]:
    """Model pairs whose strict order reverses between baseline and ceiling.

    Each unordered pair is reported at most once per benchmark, listed with the
    baseline winner first.  Output follows benchmark then model order.
    """
    out = []
    models = grid.models
    for b in grid.benchmarks:
        base = {m: selected_score(grid, m, b, Selector.BASELINE) for m in models}
        ceil = {m: selected_score(grid, m, b, ceiling) for m in models}
        for x, y in itertools.combinations(models, 2):
            db, dc = base[x] - base[y], ceil[x] - ceil[y]
            if db * dc < 0:
                first, second = (x, y) if db > 0 else (y, x)
                out.append(Flip(b, (first, second), (base[first], base[second]),
                                (ceil[first], ceil[second])))
    return out


def method_averages(grid: ResultGrid) -> dict[str, float]:
    """Mean score per method across every model and benchmark."""
    return {m.value: statistics.fmean(e.score for k, e in grid.entries.items() if k[1] is m)
            for m in grid.methods}


def leaderboard_report(grid: ResultGrid) -> dict[str, Any]:
    rows = leaderboard_rows(grid)
    report: dict[str, Any] = {
        "benchmarks": grid.benchmarks,
        "rows": [r.to_dict() for r in rows],
        "method_averages": method_averages(grid),
    }
    if Method.HELM_BASELINE in grid.methods and len(grid.methods) > 1:
        report["ceiling_delta"] = ceiling_deltas(grid)
        report["flips"] = [f.to_dict() for f in detect_flips(grid)]
        report["ranks"] = {s.value: compute_ranks(grid, s).to_dict()
                           for s in (Selector.BASELINE, Selector.STRUCTURED_CEILING)}
        if all(m in grid.methods for m in STRUCTURED_METHODS):
            g = structured_gain_summary(grid)
            report["structured_gain"] = {"avg_delta": g.avg_delta,
                                         "avg_sigma_change": g.avg_sigma_change,
                                         "per_model": {k: list(v) for k, v in g.per_model.items()}}
    return report


def format_table(rows: Sequence[LeaderboardRow], deltas: dict[str, float] | None = None) -> str:
    """Plain-text leaderboard: method rows, model columns, mean ± std."""
    models = list(dict.fromkeys(r.model_id for r in rows))
    methods = list(dict.fromkeys(r.method for r in rows))
    cell = {(r.model_id, r.method): r for r in rows}
    width = max(20, *(len(m) + 2 for m in models))
    lines = ["Method".ljust(18) + "".join(m.rjust(width) for m in models)]
    for method in methods:
        parts = []
        for m in models:
            r = cell.get((m, method))
            parts.append((f"{r.macro_mean:.2f} ± {r.macro_std:.1f}" if r else "-").rjust(width))
        lines.append(method.value.ljust(18) + "".join(parts))
    if deltas:
        lines.append("Ceiling - Baseline".ljust(18)
                     + "".join(f"{deltas[m]:+.2f}".rjust(width) for m in models))
    return "\n".join(lines)
