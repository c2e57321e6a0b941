"""Analysis reports: recovery-degree histogram, per-subset statistics, learning curves.

Each report is written as CSV; when figures are enabled the same data is also
rendered to PNG next to it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ..difficulty import DifficultyScoreTable
from ..scheduler import CurriculumPartition


@dataclass(frozen=True)
class PartitionStats:
    subset: int
    size: int
    min: float
    max: float
    mean: float


def recovery_degrees(table: DifficultyScoreTable) -> dict[int, float]:
    """BLEU recovery degree per example (the negated recovery score)."""
    if table.criterion != "recovery":
        raise ValueError(f"recovery degrees need a recovery score table, got {table.criterion!r}")
    return {i: -s for i, s in table.scores.items()}


def _report_values(table: DifficultyScoreTable) -> dict[int, float]:
    return recovery_degrees(table) if table.criterion == "recovery" else dict(table.scores)


def recovery_histogram(table: DifficultyScoreTable, bin_width: float = 10.0, threshold: float = 10.0
                       ) -> tuple[list[tuple[float, float, int]], float]:
    """Bin recovery degrees over [0, 100]; the last bin is closed on the right.

    Returns ``(rows, fraction_below_threshold)`` where rows are (lo, hi, count).
    """
    values = list(recovery_degrees(table).values())
    n_bins = max(1, math.ceil(100.0 / bin_width))
    counts = [0] * n_bins
    for v in values:
        counts[min(int(v // bin_width), n_bins - 1)] += 1
    rows = [(k * bin_width, min(100.0, (k + 1) * bin_width), counts[k]) for k in range(n_bins)]
    below = sum(1 for v in values if v < threshold) / len(values)
    return rows, below


def partition_stats(table: DifficultyScoreTable, partition: CurriculumPartition) -> list[PartitionStats]:
    check_id_universe(table, partition)
    values = _report_values(table)
    rows = []
    for k, subset in enumerate(partition.subsets, start=1):
        vs = [values[i] for i in subset]
        rows.append(PartitionStats(k, len(vs), min(vs), max(vs), sum(vs) / len(vs)))
    return rows


def check_id_universe(table: DifficultyScoreTable, partition: CurriculumPartition) -> None:
    a, b = set(table.scores), set(partition.all_ids())
    if a != b or len(partition.all_ids()) != len(b):
        offending = sorted(a ^ b)
        raise ValueError(f"score table and manifest disagree on ids: {offending[:20]}"
                         + (" ..." if len(offending) > 20 else ""))


def format_partition_table(rows: Sequence[PartitionStats]) -> str:
    """Plain-text rendering: one line per subset, ``D_k  min - max  mean``."""
    lines = [f"{'Subset':<8}{'Range':>18}{'Average':>10}"]
    for r in rows:
        rng = f"{r.min:.2f} - {r.max:.2f}"
        lines.append(f"{'D_' + str(r.subset):<8}{rng:>18}{r.mean:>10.2f}")
    return "\n".join(lines)


def write_histogram_csv(rows, below: float, path, threshold: float = 10.0) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"# fraction_below_{threshold:g}={below:.6f}"])
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in rows:
            w.writerow([f"{lo:g}", f"{hi:g}", c])
    return path


def read_histogram_csv(path) -> tuple[list[tuple[float, float, int]], float]:
    with open(path, encoding="utf-8", newline="") as f:
        lines = list(csv.reader(f))
    below = float(lines[0][0].split("=", 1)[1])
    rows = [(float(a), float(b), int(c)) for a, b, c in lines[2:]]
    return rows, below


def write_stats_csv(rows: Sequence[PartitionStats], path, criterion: str = "recovery") -> Path:
    unit = "bleu" if criterion == "recovery" else "score"
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subset", "size", f"min_{unit}", f"max_{unit}", f"mean_{unit}"])
        for r in rows:
            w.writerow([r.subset, r.size, f"{r.min:.6f}", f"{r.max:.6f}", f"{r.mean:.6f}"])
    return Path(path)


def read_curve_csv(path) -> list[tuple[int, float]]:
    with open(path, encoding="utf-8", newline="") as f:
        return [(int(r["step"]), float(r["dev_bleu"])) for r in csv.DictReader(f)]


def write_curve_csv(points: Sequence[tuple[int, float]], path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "dev_bleu"])
        for step, bleu in points:
            w.writerow([step, f"{bleu:.6f}"])
    return Path(path)


def merge_learning_curves(curves: Mapping[str, Sequence[tuple[int, float]]], path) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["run", "step", "dev_bleu"])
        for name in curves:
            for step, bleu in curves[name]:
                w.writerow([name, step, f"{bleu:.6f}"])
    return Path(path)


# -- figures ------------------------------------------------------------------

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_histogram(rows, below: float, path, threshold: float = 10.0) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.2))
    lefts = [lo for lo, _, _ in rows]
    widths = [hi - lo for lo, hi, _ in rows]
    total = sum(c for _, _, c in rows) or 1
    ax.bar(lefts, [c / total for _, _, c in rows], width=widths, align="edge",
           edgecolor="black", linewidth=0.5)
    ax.axvline(threshold, color="tab:red", linestyle="--", linewidth=1)
    ax.set_xlabel("recovery degree (sentence BLEU)")
    ax.set_ylabel("fraction of training examples")
    ax.set_title(f"{below:.1%} of examples below {threshold:g} BLEU", fontsize=9)
    ax.set_xlim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_learning_curves(curves: Mapping[str, Sequence[tuple[int, float]]], path,
                         phase_starts: Sequence[int] = ()) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for name, pts in curves.items():
        if pts:
            ax.plot([s for s, _ in pts], [b for _, b in pts], marker=".", label=name)
    for s in phase_starts[1:]:
        ax.axvline(s, color="grey", linestyle=":", linewidth=0.8)
    ax.set_xlabel("training step")
    ax.set_ylabel("dev BLEU")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
