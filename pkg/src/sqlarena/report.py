"""Run reports: delimited summary tables and accuracy figures.

Both outputs are byte-deterministic for a given trajectory so that
repeated runs with the same seed reproduce artifact files exactly.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SUMMARY_COLUMNS = [
    "phase",
    "round",
    "main",
    "opponent",
    "loss",
    "pairs_total",
    "pairs_reward1",
    "pairs_gold_fallback",
    "val_accuracy_before",
    "val_accuracy_after",
]


def summary_rows(trajectory: dict) -> list[dict]:
    rows: list[dict] = []
    for entry in trajectory.get("vbift", []):
        rows.append(
            {
                "phase": "vbift",
                "round": entry["round"],
                "main": f"vbift-{entry['round']}",
                "opponent": "",
                "loss": "",
                "pairs_total": "",
                "pairs_reward1": "",
                "pairs_gold_fallback": "",
                "val_accuracy_before": "",
                "val_accuracy_after": entry["val_accuracy"],
            }
        )
    for entry in trajectory.get("selfplay", []):
        rows.append(
            {
                "phase": "selfplay",
                "round": entry["round"],
                "main": entry["main"],
                "opponent": entry["opponent"],
                "loss": entry["loss"],
                "pairs_total": entry["pairs"]["total"],
                "pairs_reward1": entry["pairs"]["reward1"],
                "pairs_gold_fallback": entry["pairs"]["gold_fallback"],
                "val_accuracy_before": entry["val_accuracy_before"],
                "val_accuracy_after": entry["val_accuracy_after"],
            }
        )
    return rows


def write_summary_csv(trajectory: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=_SUMMARY_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in summary_rows(trajectory):
            writer.writerow(row)


def write_accuracy_figure(trajectory: dict, path: str) -> None:
    """Validation accuracy per round across both phases."""
    vbift = trajectory.get("vbift", [])
    selfplay = trajectory.get("selfplay", [])
    fig, ax = plt.subplots(figsize=(7, 4.5))
    x = 0
    if vbift:
        xs = list(range(1, len(vbift) + 1))
        ax.plot(
            xs,
            [e["val_accuracy"] for e in vbift],
            marker="o",
            label="feedback rounds",
        )
        x = len(vbift)
    if selfplay:
        xs = list(range(x + 1, x + len(selfplay) + 1))
        ax.plot(
            xs,
            [e["val_accuracy_after"] for e in selfplay],
            marker="s",
            label="self-play rounds",
        )
        best = []
        top = max((e["val_accuracy"] for e in vbift), default=0.0)
        for entry in selfplay:
            top = max(top, entry["val_accuracy_after"])
            best.append(top)
        ax.plot(xs, best, linestyle="--", color="gray", label="best in pool")
    ax.set_xlabel("round")
    ax.set_ylabel("validation accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
