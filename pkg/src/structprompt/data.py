"""Datasets, seeded train/val splitting and the per-benchmark metrics."""

from __future__ import annotations

import enum
import json
import math
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import ConfigError, InvalidArgumentError, LoadError, QuarantineError, SplitError

DEFAULT_REL_TOL = 0.05
DEFAULT_TRAIN_FRACTION = 0.9
EXACT_MATCH_CATEGORIES = frozenset({"risk", "severity", "diagnosis"})


class Metric(str, enum.Enum):
    EXACT_MATCH = "ExactMatch"
    NUMERIC_RANGE = "NumericRange"
    BINARY_ERROR_FLAG = "BinaryErrorFlag"

    @classmethod
    def parse(cls, value: str | Metric) -> Metric:
        if isinstance(value, Metric):
            return value
        key = str(value).replace("_", "").replace("-", "").lower()
        for m in cls:
            if m.value.lower() == key:
                return m
        raise ConfigError(f"unknown metric: {value!r}")


@dataclass(frozen=True)
class Example:
    id: str
    input: str
    target: str
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not str(self.target).strip():
            raise InvalidArgumentError(f"example {self.id!r} has an empty target")


@dataclass(frozen=True)
class Split:
    """A tagged view over part of a dataset.

    The ``name`` tag is what keeps the test set away from optimizers: see
    :func:`require_not_test`.
    """

    name: str
    examples: tuple[Example, ...]
    metric: Metric = Metric.EXACT_MATCH
    rel_tol: float = DEFAULT_REL_TOL

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.examples]

    def subset(self, indices: Iterable[int]) -> Split:
        return replace(self, examples=tuple(self.examples[i] for i in indices))


def require_not_test(split: Split, who: str = "optimizer") -> None:
    if split.name == "test":
        raise QuarantineError(f"{who} must never see the test split")


@dataclass(frozen=True)
class Dataset:
    name: str
    examples: tuple[Example, ...]
    metric: Metric = Metric.EXACT_MATCH
    rel_tol: float = DEFAULT_REL_TOL
    # id -> "train" | "val" | "test"
    assignments: Mapping[str, str] = field(default_factory=dict)
    config: Mapping[str, Any] = field(default_factory=dict)

    def split_view(self, name: str) -> Split:
        if name not in ("train", "val", "test"):
            raise InvalidArgumentError(f"unknown split {name!r}")
        chosen = tuple(e for e in self.examples if self.assignments.get(e.id) == name)
        return Split(name=name, examples=chosen, metric=self.metric, rel_tol=self.rel_tol)

    @property
    def train(self) -> Split:
        return self.split_view("train")

    @property
    def val(self) -> Split:
        return self.split_view("val")

    @property
    def test(self) -> Split:
        return self.split_view("test")

    def all(self, name: str = "all") -> Split:
        return Split(name=name, examples=self.examples, metric=self.metric, rel_tol=self.rel_tol)


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name.split(".")[0] + ".config.json")


def load_dataset(path: str | Path, config: Mapping[str, Any] | None = None) -> Dataset:
    """Load a JSON Lines dataset.

    Each line holds ``id``, ``input``, ``target`` and optionally ``meta`` and
    ``split``.  The metric block comes from ``config`` or, failing that, from a
    sidecar ``<stem>.config.json`` next to the file.  Rows tagged
    ``"split": "test"`` are held out; the rest are partitioned into train/val
    with :func:`split` using the configured fraction and seed.
    """
    path = Path(path)
    if config is None:
        sidecar = _sidecar_path(path)
        config = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    metric = Metric.parse(config.get("metric", Metric.EXACT_MATCH))
    rel_tol = float(config.get("rel_tol", DEFAULT_REL_TOL))

    examples: list[Example] = []
    tags: dict[str, str] = {}
    seen: set[str] = set()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            ex = Example(id=str(row["id"]), input=str(row["input"]), target=str(row["target"]),
                         meta={str(k): str(v) for k, v in (row.get("meta") or {}).items()})
        except (json.JSONDecodeError, KeyError, TypeError, AttributeError,
                InvalidArgumentError) as exc:
            raise LoadError(f"{path}:{lineno}: malformed example ({exc})") from exc
        if ex.id in seen:
            raise LoadError(f"{path}:{lineno}: duplicate id {ex.id!r}")
        seen.add(ex.id)
        examples.append(ex)
        if row.get("split") == "test":
            tags[ex.id] = "test"

    ds = Dataset(name=str(config.get("name", path.name.split(".")[0])), examples=tuple(examples),
                 metric=metric, rel_tol=rel_tol, assignments=tags, config=dict(config))
    pool = [e for e in examples if e.id not in tags]
    if len(pool) >= 2:
        ds = split(ds, float(config.get("train_fraction", DEFAULT_TRAIN_FRACTION)),
                   int(config.get("split_seed", 0)))
    return ds


def split(dataset: Dataset, train_fraction: float, seed: int) -> Dataset:
    """Seeded train/val partition of every non-test example.

    The pool (file order) is shuffled by ``random.Random(seed)``; the first
    ``floor(n * train_fraction)`` ids go to train, the rest to val.  Both sides
    are kept nonempty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError("train_fraction must lie strictly between 0 and 1")
    pool = [e.id for e in dataset.examples if dataset.assignments.get(e.id) != "test"]
    if len(pool) < 2:
        raise SplitError(f"need at least 2 non-test examples to split, got {len(pool)}")
    random.Random(seed).shuffle(pool)
    n_train = min(max(math.floor(len(pool) * train_fraction), 1), len(pool) - 1)
    tags = {i: "test" for i, t in dataset.assignments.items() if t == "test"}
    tags.update({i: "train" for i in pool[:n_train]})
    tags.update({i: "val" for i in pool[n_train:]})
    return replace(dataset, assignments=tags)


_TERMINAL_PUNCT = ".!?,;:"


def normalize(text: str) -> str:
    return str(text).strip().casefold().rstrip(_TERMINAL_PUNCT).strip()


_NUMBER_RE = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def parse_number(text: str) -> float | None:
    cleaned = normalize(text).replace(",", "")
    if _NUMBER_RE.fullmatch(cleaned):
        return float(cleaned)
    return None


_NO_ERROR = {"0", "no", "false", "no error", "correct", "none", "no errors"}
_ERROR = {"1", "yes", "true", "error", "incorrect", "contains an error", "has error"}


def parse_error_flag(text: str) -> int | None:
    t = normalize(text)
    if t in _NO_ERROR:
        return 0
    if t in _ERROR:
        return 1
    if re.search(r"\bno\s+errors?\b", t) or "does not contain" in t:
        return 0
    if re.search(r"\berrors?\b", t):
        return 1
    return None


def score(metric: Metric | str, prediction: str, example: Example,
          rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Score one parsed prediction against an example; always in [0, 1]."""
    metric = Metric.parse(metric)
    if metric is Metric.EXACT_MATCH:
        return float(normalize(prediction) == normalize(example.target))

    if metric is Metric.NUMERIC_RANGE:
        category = str(example.meta.get("category", "")).strip().lower()
        if category in EXACT_MATCH_CATEGORIES:
            return float(normalize(prediction) == normalize(example.target))
        target = parse_number(example.target)
        if target is None:
            raise ConfigError(f"example {example.id!r}: non-numeric target {example.target!r}")
        pred = parse_number(prediction)
        if pred is None:
            return 0.0
        return float(abs(pred - target) <= rel_tol * abs(target) + 1e-12)

    target_bit = parse_error_flag(example.target)
    if target_bit is None:
        raise ConfigError(f"example {example.id!r}: target {example.target!r} is not an error flag")
    return float(parse_error_flag(prediction) == target_bit)
