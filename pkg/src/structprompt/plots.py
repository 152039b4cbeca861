"""Optional SVG figures.  matplotlib is imported lazily (extra: ``plot``)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from .errors import ConfigError


def _plt():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise ConfigError("SVG output needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def delta_heatmap(grid, path: str | Path) -> None:
    """Per-cell overall-ceiling minus baseline, models by benchmarks."""
    from .leaderboard import Selector, selected_score
    plt = _plt()
    models, benches = grid.models, grid.benchmarks
    data = [[selected_score(grid, m, b, Selector.OVERALL_CEILING)
             - selected_score(grid, m, b, Selector.BASELINE) for b in benches] for m in models]
    fig, ax = plt.subplots(figsize=(1.2 * len(benches) + 2, 0.6 * len(models) + 1.5))
    im = ax.imshow(data, cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(benches)), benches, rotation=45, ha="right")
    ax.set_yticks(range(len(models)), models)
    for i, row in enumerate(data):
        for j, v in enumerate(row):
            ax.text(j, i, f"{v:.1f}", ha="center", va="center", color="white", fontsize=8)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cost_scatter(rows: Sequence[dict], path: str | Path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 4))
    for r in rows:
        if r.get("macro_accuracy") is None:
            continue
        ax.scatter(r["additional_prompt_tokens"], r["macro_accuracy"])
        ax.annotate(r["method"], (r["additional_prompt_tokens"], r["macro_accuracy"]), fontsize=8)
    ax.set_xlabel("additional prompt tokens")
    ax.set_ylabel("macro accuracy")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def flip_rate_plot(rows: Sequence, path: str | Path, bins: int = 10) -> None:
    """Fraction of argmax changes against answer TV, binned."""
    plt = _plt()
    if not rows:
        raise ConfigError("no sweep rows to plot")
    top = max(r.tv_y for r in rows) or 1.0
    counts, flips = [0] * bins, [0] * bins
    for r in rows:
        k = min(int(r.tv_y / top * bins), bins - 1)
        counts[k] += 1
        flips[k] += not r.argmax_equal
    xs = [(k + 0.5) * top / bins for k in range(bins) if counts[k]]
    ys = [flips[k] / counts[k] for k in range(bins) if counts[k]]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(xs, ys, marker="o")
    ax.set_xlabel("TV between answer distributions")
    ax.set_ylabel("argmax change rate")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
