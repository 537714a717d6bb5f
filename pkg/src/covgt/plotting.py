"""Report figures written next to the JSON/TSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_curves(history: list[dict], path) -> Path:
    """Train loss and validation accuracy per epoch, one line per stage."""
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    stages = sorted({row["stage"] for row in history})
    offset = 0
    for stage in stages:
        rows = [r for r in history if r["stage"] == stage]
        xs = [offset + r["epoch"] + 1 for r in rows]
        label = "pretrain" if stage == 0 else f"stage {stage}"
        ax_loss.plot(xs, [r["train_loss"] for r in rows], marker="o", label=label)
        if any("val_acc" in r for r in rows):
            ax_acc.plot(xs, [r.get("val_acc", float("nan")) for r in rows], marker="o", label=label)
        offset = xs[-1] if xs else offset
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy")
    ax_acc.set_ylim(0, 1)
    for ax in (ax_loss, ax_acc):
        ax.grid(alpha=0.3)
        if ax.lines:
            ax.legend()
    return _save(fig, path)


def plot_per_type(report: dict, path) -> Path:
    """Bar chart of per-question-type accuracy from an evaluation report."""
    types = list(report["per_type"])
    accs = [report["per_type"][t]["accuracy"] for t in types]
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(types) + 2), 3.5))
    ax.bar(types, accs, color="tab:blue")
    ax.axhline(report["accuracy"], color="k", ls="--", lw=1, label=f"overall {report['accuracy']:.3f}")
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.set_title(f"split: {report['split']} ({report['count']} questions)")
    ax.legend()
    return _save(fig, path)


def plot_ablation(results: dict[str, float], path, title: str = "") -> Path:
    """Horizontal bars comparing variant accuracies."""
    names = list(results)
    fig, ax = plt.subplots(figsize=(6, 0.5 * len(names) + 1.5))
    ax.barh(names, [results[n] for n in names], color="tab:green")
    ax.set_xlim(0, 1)
    ax.set_xlabel("accuracy")
    if title:
        ax.set_title(title)
    ax.invert_yaxis()
    return _save(fig, path)
