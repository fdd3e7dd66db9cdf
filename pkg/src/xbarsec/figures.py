"""Figure rendering for the report paths.

Every chart is written straight to a file (Agg backend, no display); the
numbers behind each figure always ship alongside it as CSV/JSON, so the
figures are a reading aid, not the record.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import os

import matplotlib.pyplot as plt
import numpy as np

FIGSIZE = (6.4, 4.0)
DPI = 150


def _finish(fig, path):
    path = os.fspath(path)
    tmp = f"{path}.tmp.png"
    fig.tight_layout()
    fig.savefig(tmp, dpi=DPI)
    plt.close(fig)
    os.replace(tmp, path)
    return path


def attack_sweep_figure(results, baseline: float, chance: float, path,
                        title: str = "Extraction accuracy by protected layers"):
    """Bar chart of mean extracted-model accuracy per protection choice.

    `results` is a list of (label, AttackReport); error bars show one
    standard deviation over trials.
    """
    labels = [label for label, _ in results]
    means = [rep.mean_accuracy for _, rep in results]
    sds = [rep.stddev_accuracy for _, rep in results]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    xs = np.arange(len(labels))
    ax.bar(xs, means, yerr=sds, capsize=3, color="#4878a8", label="extracted (random keys)")
    ax.axhline(baseline, color="#2a7f3f", ls="--", lw=1.2, label=f"baseline {baseline:.2f}")
    ax.axhline(chance, color="#b2403c", ls=":", lw=1.2, label=f"chance {chance:.2f}")
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("classification accuracy")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def attack_trials_figure(report, path, title: str = "Random-key extraction trials"):
    """Per-trial accuracy scatter with the mean and chance level marked."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    xs = np.arange(report.trials)
    ax.plot(xs, report.accuracies, "o", ms=4, color="#4878a8", label="trial accuracy")
    ax.axhline(report.mean_accuracy, color="#2a7f3f", ls="--", lw=1.2,
               label=f"mean {report.mean_accuracy:.3f}")
    ax.axhline(report.chance, color="#b2403c", ls=":", lw=1.2,
               label=f"chance {report.chance:.2f}")
    ax.set_xlabel("trial")
    ax.set_ylabel("classification accuracy")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def dnc_figure(report, path, title: str = "Divide-and-conquer probe gaps"):
    """Accuracy gap per probed key bit against its detection threshold."""
    rows = report.rows
    fig, ax = plt.subplots(figsize=FIGSIZE)
    if rows:
        gaps = np.array([r["gap"] for r in rows])
        thresholds = np.array([r["stderr"] for r in rows]) * report.params.get("se_factor", 3.0)
        xs = np.arange(len(rows))
        found = np.array([bool(r["distinguishable"]) for r in rows])
        ax.plot(xs[~found], gaps[~found], "o", ms=3, color="#4878a8", label="hidden bit")
        if found.any():
            ax.plot(xs[found], gaps[found], "o", ms=4, color="#b2403c",
                    label="distinguishable bit")
        ax.plot(xs, thresholds, "-", lw=1.0, color="#777777", label="3 SE threshold")
        frac = float(found.mean())
        ax.set_title(f"{title} ({frac:.1%} distinguishable)")
    else:
        ax.set_title(f"{title} (no targets probed)")
    ax.set_xlabel("probed (block, column) target")
    ax.set_ylabel("|accuracy(bit=1) - accuracy(bit=0)|")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def overhead_figure(rows, path, title: str = "Key storage per PE"):
    """Bar chart of key-storage bits per method, published ratios annotated."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    labels = [r.method for r in rows]
    bits = [r.key_storage_bits for r in rows]
    xs = np.arange(len(labels))
    bars = ax.bar(xs, bits, color=["#2a7f3f" if m == "our" else "#4878a8" for m in labels])
    for x, bar, row in zip(xs, bars, rows):
        note = f"{row.key_storage_bits}"
        pub = row.published.get("key_storage") if row.published else None
        if pub is not None:
            note += f"\npub {pub}X"
        ax.text(x, bar.get_height(), note, ha="center", va="bottom", fontsize=8)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels)
    ax.set_ylabel("key storage (bits)")
    ax.set_title(title)
    ax.set_ylim(0, max(bits) * 1.25)
    return _finish(fig, path)
