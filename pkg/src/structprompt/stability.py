"""Finite-support toolkit for reasoning-path stability.

Answers are produced by pushing a distribution over reasoning paths through a
prompt-independent answer channel.  Total variation can only shrink through
that channel, Pinsker bounds it by the path KL, and a decision margin larger
than twice the answer TV keeps the argmax fixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError

TOL = 1e-12


def _check_probs(probs: Sequence[float], what: str) -> None:
    if any(p < -TOL for p in probs):
        raise InvalidArgumentError(f"{what}: negative probability")
    if abs(math.fsum(probs) - 1.0) > 1e-9:
        raise InvalidArgumentError(f"{what}: probabilities sum to {math.fsum(probs)}, not 1")


@dataclass(frozen=True)
class Distribution:
    """A finite distribution; ``support`` labels line up with ``probs``."""

    support: tuple[Hashable, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.support) != len(self.probs):
            raise InvalidArgumentError("support and probs differ in length")
        if len(set(self.support)) != len(self.support):
            raise InvalidArgumentError("support labels must be distinct")
        _check_probs(self.probs, "distribution")

    @classmethod
    def of(cls, probs: Sequence[float] | Mapping[Hashable, float]) -> Distribution:
        if isinstance(probs, Mapping):
            return cls(tuple(probs), tuple(float(p) for p in probs.values()))
        return cls(tuple(range(len(probs))), tuple(float(p) for p in probs))

    def prob(self, label: Hashable) -> float:
        return self.probs[self.support.index(label)]

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.probs))


# distinct names for the roles each distribution plays
PathDistribution = Distribution
AnswerDistribution = Distribution


@dataclass(frozen=True)
class AnswerChannel:
    """Rows P(y | tau): one answer distribution per reasoning path."""

    rows: Mapping[Hashable, Distribution]

    def __post_init__(self) -> None:
        labels = [tuple(r.support) for r in self.rows.values()]
        if len(set(labels)) > 1:
            raise InvalidArgumentError("every channel row must share one answer label set")

    @property
    def labels(self) -> tuple[Hashable, ...]:
        return next(iter(self.rows.values())).support

    @classmethod
    def from_matrix(cls, matrix: Sequence[Sequence[float]],
                    labels: Sequence[Hashable] | None = None) -> AnswerChannel:
        m = [list(r) for r in matrix]
        labels = tuple(labels) if labels is not None else tuple(range(len(m[0])))
        return cls({k: Distribution(labels, tuple(float(x) for x in row)) for k, row in enumerate(m)})


def marginal_answer_dist(paths: Distribution, channel: AnswerChannel) -> Distribution:
    """P(y) = sum over paths of P(tau) P(y | tau)."""
    missing = [t for t in paths.support if t not in channel.rows]
    if missing:
        raise InvalidArgumentError(f"channel has no row for paths {missing}")
    labels = channel.labels
    out = np.zeros(len(labels))
    for tau, p in zip(paths.support, paths.probs):
        out += p * np.asarray(channel.rows[tau].probs)
    return Distribution(labels, tuple(float(x) for x in out))


def _aligned(P: Distribution, Q: Distribution) -> tuple[np.ndarray, np.ndarray]:
    if set(P.support) != set(Q.support) or len(P.support) != len(Q.support):
        raise InvalidArgumentError("distributions are over different supports")
    q = np.array([Q.prob(s) for s in P.support])
    return np.asarray(P.probs), q


def tv_distance(P: Distribution, Q: Distribution) -> float:
    p, q = _aligned(P, Q)
    return 0.5 * float(np.abs(p - q).sum())


def kl_divergence(P: Distribution, Q: Distribution) -> float:
    """Natural-log KL(P || Q); ``math.inf`` when P puts mass where Q has none."""
    p, q = _aligned(P, Q)
    total = 0.0
    for pi, qi in zip(p, q):
        if pi <= 0.0:
            continue
        if qi <= 0.0:
            return math.inf
        total += pi * math.log(pi / qi)
    return max(total, 0.0)


@dataclass(frozen=True)
class DPICheck:
    tv_y: float
    tv_tau: float
    holds: bool


def check_dpi(paths_p: Distribution, paths_q: Distribution, channel: AnswerChannel) -> DPICheck:
    tv_y = tv_distance(marginal_answer_dist(paths_p, channel), marginal_answer_dist(paths_q, channel))
    tv_tau = tv_distance(paths_p, paths_q)
    return DPICheck(tv_y, tv_tau, tv_y <= tv_tau + TOL)


@dataclass(frozen=True)
class PinskerCheck:
    tv_y: float
    kl_tau: float
    bound: float
    holds: bool


def check_pinsker(paths_p: Distribution, paths_q: Distribution, channel: AnswerChannel) -> PinskerCheck:
    """Compare the answer TV against sqrt(KL(paths_p || paths_q) / 2)."""
    tv_y = tv_distance(marginal_answer_dist(paths_p, channel), marginal_answer_dist(paths_q, channel))
    kl = kl_divergence(paths_p, paths_q)
    bound = math.sqrt(kl / 2.0) if math.isfinite(kl) else math.inf
    return PinskerCheck(tv_y, kl, bound, tv_y <= bound + TOL)


@dataclass(frozen=True)
class Margin:
    y_star: Hashable
    margin: float


def decision_margin(P: Distribution) -> Margin:
    """Top answer and its lead over the runner-up; ties pick the first label."""
    if len(P.support) < 2:
        raise InvalidArgumentError("decision margin needs at least two labels")
    order = sorted(range(len(P.probs)), key=lambda k: (-P.probs[k], k))
    top, second = order[0], order[1]
    return Margin(P.support[top], P.probs[top] - P.probs[second])


def argmax_label(P: Distribution) -> Hashable:
    """Most probable label, lowest index on ties."""
    return P.support[int(np.argmax(P.probs))]


@dataclass(frozen=True)
class Verdict:
    guaranteed_invariant: bool
    argmax_equal: bool
    tv: float
    margin: float


def stability_verdict(P: Distribution, Q: Distribution) -> Verdict:
    """Is the prediction under P guaranteed to survive the move to Q?

    ``guaranteed_invariant`` is TV(P, Q) < margin(P) / 2; ``argmax_equal``
    compares the two argmaxes directly.
    """
    tv = tv_distance(P, Q)
    m = decision_margin(P)
    aligned_q = Distribution(P.support, tuple(Q.prob(s) for s in P.support))
    argmax_equal = argmax_label(P) == argmax_label(aligned_q)
    return Verdict(tv < 0.5 * m.margin, bool(argmax_equal), tv, m.margin)


def kl_margin_sufficient(kappa: float, margin: float) -> bool:
    """Whether a path-KL budget ``kappa`` certifies invariance at ``margin``."""
    if kappa < 0:
        raise InvalidArgumentError("kappa must be >= 0")
    return math.sqrt(kappa / 2.0) < margin / 2.0


# --------------------------------------------------------------------------- sweeps


def random_distribution(rng: np.random.Generator, k: int, sparsity: float = 0.0) -> Distribution:
    x = rng.dirichlet(np.ones(k))
    if sparsity > 0:
        mask = rng.random(k) < sparsity
        if mask.all():
            mask[rng.integers(k)] = False
        x = np.where(mask, 0.0, x)
        x = x / x.sum()
    return Distribution.of(list(x))


def random_channel(rng: np.random.Generator, n_paths: int, n_labels: int) -> AnswerChannel:
    return AnswerChannel.from_matrix([list(rng.dirichlet(np.ones(n_labels))) for _ in range(n_paths)])


@dataclass(frozen=True)
class SweepRow:
    trial: int
    tv_tau: float
    kl_tau: float
    tv_y: float
    margin: float
    dpi_holds: bool
    pinsker_holds: bool
    guaranteed: bool
    argmax_equal: bool


def stability_sweep(n: int, seed: int = 0, max_support: int = 6) -> list[SweepRow]:
    """Random (paths, paths', channel) triples with every check applied."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n):
        n_paths = int(rng.integers(2, max_support + 1))
        n_labels = int(rng.integers(2, max_support + 1))
        p = random_distribution(rng, n_paths)
        # mix toward p so small perturbations are well represented
        w = float(rng.random())
        q_raw = w * np.asarray(p.probs) + (1 - w) * np.asarray(random_distribution(rng, n_paths).probs)
        q = Distribution.of(list(q_raw / q_raw.sum()))
        ch = random_channel(rng, n_paths, n_labels)
        dpi = check_dpi(p, q, ch)
        pin = check_pinsker(p, q, ch)
        ans_p, ans_q = marginal_answer_dist(p, ch), marginal_answer_dist(q, ch)
        v = stability_verdict(ans_p, ans_q)
        rows.append(SweepRow(k, dpi.tv_tau, pin.kl_tau, dpi.tv_y, v.margin, dpi.holds, pin.holds,
                             v.guaranteed_invariant, v.argmax_equal))
    return rows


def bernoulli_demo() -> dict[str, float]:
    """Worked example: Bernoulli(0.5) vs Bernoulli(0.6) paths through a binary channel."""
    p = Distribution.of([0.5, 0.5])
    q = Distribution.of([0.6, 0.4])
    channel = AnswerChannel.from_matrix([[0.9, 0.1], [0.2, 0.8]], labels=("A", "B"))
    pin = check_pinsker(p, q, channel)
    dpi = check_dpi(p, q, channel)
    return {"kl": pin.kl_tau, "bound": pin.bound, "tv_tau": dpi.tv_tau, "tv_y": pin.tv_y,
            "pinsker_holds": pin.holds, "dpi_holds": dpi.holds}
