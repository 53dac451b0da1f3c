"""Run artifact persistence and cross-run comparison reports.

Numeric CSVs keep full float precision (shortest round-trip repr); the
markdown comparison rounds to 2 decimals for display, mirroring how the
reference tables are printed.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import EvaluationError
from .metrics import per_class_table
from .training import RunRecord


def metrics_csv(record: RunRecord) -> str:
    """Per-class and aggregate scores, full precision."""
    rep = record.metrics()
    lines = ["class,count,accuracy,precision,recall,f1"]
    for i, name in enumerate(record.class_names):
        lines.append(",".join([
            name, str(record.class_counts[i]),
            str(rep.per_class_accuracy[i]), str(rep.per_class_precision[i]),
            str(rep.per_class_recall[i]), str(rep.per_class_f1[i]),
        ]))
    lines.append(",".join([
        "__overall__", str(rep.sample_count), str(rep.overall_accuracy),
        str(rep.macro_precision), str(rep.macro_recall), str(rep.macro_f1),
    ]))
    return "\n".join(lines) + "\n"


def curves_csv(record: RunRecord) -> str:
    lines = ["epoch,train_loss,val_macro_f1"]
    for e, (loss, f1) in enumerate(zip(record.train_losses, record.val_macro_f1), start=1):
        lines.append(f"{e},{loss},{f1}")
    return "\n".join(lines) + "\n"


def confusion_png(counts: np.ndarray, names, path: Path | str) -> None:
    counts = np.asarray(counts)
    fig, ax = plt.subplots(figsize=(1.0 + 0.7 * len(names), 1.0 + 0.7 * len(names)))
    ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    thresh = counts.max() / 2 if counts.max() else 0.5
    for i in range(counts.shape[0]):
        for j in range(counts.shape[1]):
            ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > thresh else "black")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_run_artifacts(record: RunRecord, out_dir: Path | str) -> Path:
    """Persist run_record.json, metrics.csv, curves.csv and confusion.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_record.json").write_text(record.to_json(), encoding="utf-8")
    (out_dir / "metrics.csv").write_text(metrics_csv(record), encoding="utf-8")
    (out_dir / "curves.csv").write_text(curves_csv(record), encoding="utf-8")
    confusion_png(record.confusion_matrix().counts, record.class_names,
                  out_dir / "confusion.png")
    return out_dir


def load_run_record(run_dir: Path | str) -> RunRecord:
    return RunRecord.from_json((Path(run_dir) / "run_record.json").read_text(encoding="utf-8"))


def comparison_markdown(records: list[RunRecord]) -> str:
    """Side-by-side aggregate table plus a per-class section per run."""
    if not records:
        raise EvaluationError("no records to compare")
    reps = [r.metrics() for r in records]
    best = int(np.argmax([rep.macro_f1 for rep in reps]))
    headers = [r.experiment_id + (" (best)" if i == best else "")
               for i, r in enumerate(records)]

    lines = ["# Run comparison", ""]
    lines.append("| Metric | " + " | ".join(headers) + " |")
    lines.append("|---" * (len(records) + 1) + "|")
    rows = [
        ("Overall Accuracy (%)", [f"{rep.overall_accuracy * 100:.2f}" for rep in reps]),
        ("Macro Precision", [f"{rep.macro_precision:.2f}" for rep in reps]),
        ("Macro Recall", [f"{rep.macro_recall:.2f}" for rep in reps]),
        ("Macro F1", [f"{rep.macro_f1:.2f}" for rep in reps]),
    ]
    for label, values in rows:
        lines.append(f"| {label} | " + " | ".join(values) + " |")

    for record, rep in zip(records, reps):
        lines += ["", f"## {record.experiment_id}: per-class scores", "",
                  "| Class | Accuracy | F1 |", "|---|---|---|"]
        for name, acc, f1 in per_class_table(rep, record.class_names):
            lines.append(f"| {name} | {acc} | {f1} |")
    return "\n".join(lines) + "\n"


def write_report(run_dirs: list[Path | str], out_dir: Path | str) -> Path:
    """Build comparison.md + per-run heatmaps; skips unreadable records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for rd in run_dirs:
        try:
            records.append(load_run_record(rd))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            print(f"warning: skipping {rd}: {exc}", file=sys.stderr)
    if not records:
        raise EvaluationError("no readable run records among the given directories")
    (out_dir / "comparison.md").write_text(comparison_markdown(records), encoding="utf-8")
    for record in records:
        confusion_png(record.confusion_matrix().counts, record.class_names,
                      out_dir / f"confusion_{record.experiment_id}.png")
    return out_dir / "comparison.md"
