"""Trial logs and optimizer results shared by both optimizers."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .program import PromptAssignment


@dataclass(frozen=True)
class TrialRecord:
    t: int
    score: float
    # (instruction index, demo-set index) per module; None for BFRS trials
    indices: tuple[tuple[int, int], ...] | None = None
    assignment: PromptAssignment | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"t": self.t, "score": self.score}
        if self.indices is not None:
            d["indices"] = [list(p) for p in self.indices]
        if self.assignment is not None:
            d["demo_ids"] = [[x.source_example_id for x in s] for s in self.assignment.demos]
        return d


@dataclass
class OptimizationResult:
    best_assignment: PromptAssignment
    best_score: float
    trials: list[TrialRecord]
    full_val_score: float | None = None
    warnings: list[str] = field(default_factory=list)
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "best_assignment": self.best_assignment.to_dict(),
            "best_score": self.best_score,
            "full_val_score": self.full_val_score,
            "trials": [t.to_dict() for t in self.trials],
            "warnings": list(self.warnings),
            **self.extra,
        }

    def save(self, path: str | Path, **provenance: Any) -> None:
        payload = {**provenance, **self.to_dict()}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
