"""Classification metrics and report emission: markdown + CSV tables + figures.

Report figures are rendered with matplotlib (Agg) to PNG next to the
delimited tables; heatmap/overlay SVGs produced upstream are copied in.
All outputs are byte-deterministic for fixed inputs.
"""

from __future__ import annotations

import csv
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .defects import CLASS_NAMES, DISPLAY_NAMES, SHORT_NAMES

N_CLASSES = len(CLASS_NAMES)


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, cols = predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(true_labels, pred_labels) -> ConfusionMatrix:
    """4x4 count matrix; counts[i][j] = #(true == i and predicted == j)."""
    true_labels = np.asarray(true_labels, dtype=int)
    pred_labels = np.asarray(pred_labels, dtype=int)
    if true_labels.shape != pred_labels.shape:
        raise ValueError(f"label length mismatch: {true_labels.shape} vs {pred_labels.shape}")
    if true_labels.size and not (
        (0 <= true_labels).all() and (true_labels < N_CLASSES).all()
        and (0 <= pred_labels).all() and (pred_labels < N_CLASSES).all()
    ):
        raise ValueError(f"labels must lie in 0..{N_CLASSES - 1}")
    counts = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    for t, p in zip(true_labels, pred_labels):
        counts[t, p] += 1
    return ConfusionMatrix(counts=counts)


def class_metrics(cm: ConfusionMatrix) -> dict:
    """Per-class precision/recall/F1 plus overall accuracy.

    Per-class accuracy equals recall by construction (diagonal over row sum).
    Zero-denominator metrics come back as 0 with the class listed in "flagged"."""
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    per_class = []
    flagged = []
    for j, name in enumerate(CLASS_NAMES):
        col = int(counts[:, j].sum())
        row = int(counts[j, :].sum())
        tp = int(counts[j, j])
        precision = tp / col if col else 0.0
        recall = tp / row if row else 0.0
        if col == 0 or row == 0:
            flagged.append(name)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        per_class.append({
            "class": name,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "per_class_accuracy": recall,
            "support": row,
        })
    accuracy = float(np.trace(counts)) / total
    return {"per_class": per_class, "accuracy": accuracy, "flagged": flagged}


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_confusion_png(cm: ConfusionMatrix, path: str | Path):
    fig, ax = plt.subplots(figsize=(5.2, 4.4), dpi=100)
    im = ax.imshow(cm.counts, cmap="Blues")
    shorts = [SHORT_NAMES[n] for n in CLASS_NAMES]
    ax.set_xticks(range(N_CLASSES), shorts)
    ax.set_yticks(range(N_CLASSES), shorts)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    vmax = cm.counts.max() if cm.total else 1
    for i in range(N_CLASSES):
        for j in range(N_CLASSES):
            color = "white" if cm.counts[i, j] > 0.55 * vmax else "black"
            ax.text(j, i, str(cm.counts[i, j]), ha="center", va="center", color=color, fontsize=9)
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title("Defect classification confusion matrix")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_history_png(entries: list[dict], path: str | Path):
    epochs = [e["epoch"] for e in entries]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6), dpi=100)
    ax1.plot(epochs, [e["train_loss"] for e in entries], marker=".", color="tab:red")
    ax1.set_xlabel("Epoch")
    ax1.set_ylabel("Train loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [e["train_acc"] for e in entries], marker=".", label="train", color="tab:blue")
    if entries and "test_acc" in entries[0]:
        ax2.plot(epochs, [e["test_acc"] for e in entries], marker=".", label="test", color="tab:green")
    ax2.set_xlabel("Epoch")
    ax2.set_ylabel("Accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend(loc="lower right")
    ax2.grid(alpha=0.3)
    fig.suptitle("Training history")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_iou_bars_png(slab_rows: list[dict], path: str | Path):
    slabs = [row["slab_id"] for row in slab_rows]
    means = [np.mean([row["zones"][c]["iou"] for c in CLASS_NAMES if c in row["zones"]])
             for row in slab_rows]
    fig, ax = plt.subplots(figsize=(7, 3.4), dpi=100)
    ax.bar(slabs, means, color="tab:blue")
    ax.axhline(float(np.mean(means)), color="tab:red", linestyle="--", linewidth=1,
               label=f"mean {np.mean(means):.3f}")
    ax.set_ylabel("Mean IoU")
    ax.set_ylim(0, 1)
    ax.tick_params(axis="x", rotation=45)
    ax.legend(loc="lower right")
    ax.set_title("Rasterized IoU by slab")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def render_prediction_map_png(points_xy: np.ndarray, labels: np.ndarray, path: str | Path,
                              width_in: float, height_in: float):
    """Colored scatter of per-point predicted defect classes over the deck extent."""
    colors = ["tab:red", "tab:orange", "tab:purple", "tab:brown"]
    fig, ax = plt.subplots(figsize=(8, 3.4), dpi=100)
    for k, name in enumerate(CLASS_NAMES):
        sel = labels == k
        if sel.any():
            ax.scatter(points_xy[sel, 0], points_xy[sel, 1], s=18, color=colors[k],
                       label=DISPLAY_NAMES[name])
    ax.set_xlim(0, width_in)
    ax.set_ylim(height_in, 0)
    ax.set_xlabel("x (in)")
    ax.set_ylabel("y (in)")
    ax.legend(loc="upper right", fontsize=7)
    ax.set_title("Predicted defect types at clustered points")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Tables and the markdown report
# ---------------------------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _zone_matrix_rows(slab_rows: list[dict], key: str, fmt) -> tuple[list[list], list[str]]:
    rows = []
    col_values: dict[str, list[float]] = {c: [] for c in CLASS_NAMES}
    for row in slab_rows:
        vals = []
        for c in CLASS_NAMES:
            v = row["zones"].get(c, {}).get(key)
            vals.append(v)
            if v is not None:
                col_values[c].append(v)
        present = [v for v in vals if v is not None]
        avg = float(np.mean(present)) if present else None
        rows.append([row["slab_id"]] + [fmt(v) if v is not None else "" for v in vals]
                    + [fmt(avg) if avg is not None else ""])
    footer = ["Avg"]
    for c in CLASS_NAMES:
        footer.append(fmt(float(np.mean(col_values[c]))) if col_values[c] else "")
    all_vals = [v for vals in col_values.values() for v in vals]
    footer.append(fmt(float(np.mean(all_vals))) if all_vals else "")
    rows.append(footer)
    return rows, ["Slab"] + [SHORT_NAMES[c] for c in CLASS_NAMES] + ["Avg"]


def _md_table(header: list[str], rows: list[list]) -> str:
    out = ["| " + " | ".join(str(h) for h in header) + " |",
           "|" + "|".join(["---"] * len(header)) + "|"]
    for row in rows:
        out.append("| " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(out)


def emit_report(data: dict, out_dir: str | Path) -> Path:
    """Write report.md, tables/*.csv, and figures/* from an assembled report dict.

    Missing sections produce a stub report with explicit warnings instead of
    failing. Returns the path of report.md.
    """
    out_dir = Path(out_dir)
    tables = out_dir / "tables"
    figures = out_dir / "figures"
    tables.mkdir(parents=True, exist_ok=True)
    figures.mkdir(parents=True, exist_ok=True)

    warnings_list = list(data.get("warnings", []))
    md = [f"# {data.get('title', 'Impact-echo assessment report')}", ""]
    if "seed" in data:
        md += [f"Master seed: `{data['seed']}`", ""]
    md += ["Notation: D1 = Shallow Delamination, D2 = Honeycombing, D3 = Void, "
           "D4 = Deep Delamination, %Ov = overlap percentage.", ""]

    slab_rows = data.get("slabs") or []
    if slab_rows:
        iou_rows, header = _zone_matrix_rows(slab_rows, "iou", lambda v: f"{v:.3f}")
        _write_csv(tables / "iou_matrix.csv", header, iou_rows)
        md += ["## Ground-truth overlay: IoU matrix", "", _md_table(header, iou_rows), ""]

        prec_rows, header = _zone_matrix_rows(slab_rows, "precision", lambda v: f"{100 * v:.1f}%")
        _write_csv(tables / "precision.csv", header, prec_rows)
        md += ["## Precision (% of clustered points validated by the mask)", "",
               _md_table(header, prec_rows), ""]

        ov_header = ["Slab"]
        for c in CLASS_NAMES:
            ov_header += [SHORT_NAMES[c], "%Ov"]
        ov_rows = []
        for row in slab_rows:
            r = [row["slab_id"]]
            for c in CLASS_NAMES:
                z = row["zones"].get(c)
                r += [z["valid_points"], f"{100 * z['overlap_pct']:.1f}%"] if z else ["", ""]
            ov_rows.append(r)
        _write_csv(tables / "overlap.csv", ov_header, ov_rows)
        md += ["## Validated defect points and overlap percentages", "",
               _md_table(ov_header, ov_rows), ""]
        render_iou_bars_png(slab_rows, figures / "iou_by_slab.png")
    else:
        warnings_list.append("no overlay metrics available; overlay tables omitted")

    ds = data.get("dataset")
    if ds:
        counts_rows = [[DISPLAY_NAMES[CLASS_NAMES[int(k)]], v] for k, v in sorted(ds["class_counts"].items(),
                                                                                  key=lambda kv: int(kv[0]))]
        counts_rows.append(["Total", ds["n_sequences"]])
        _write_csv(tables / "class_counts.csv", ["Class", "Sequences"], counts_rows)
        md += ["## Sequence dataset", "",
               f"{ds['n_sequences']} sequences ({ds['train']} train / {ds['test']} test).", "",
               _md_table(["Class", "Sequences"], counts_rows), ""]

    lag1 = data.get("lag1")
    if lag1 and lag1.get("n"):
        md += ["## Sequence diagnostics", "",
               f"Mean lag-1 autocorrelation: {lag1['mean']:.3f} +- {lag1['std']:.3f} "
               f"over {lag1['n']} sequences (reference for field corpora: 0.65 +- 0.12).", ""]

    clf = data.get("classifier")
    if clf:
        cm = ConfusionMatrix(counts=np.asarray(clf["confusion"], dtype=int))
        metrics = class_metrics(cm)
        cls_header = ["Defect Type", "Precision", "Recall", "F1 Score", "Per-Class Accuracy"]
        cls_rows = [[DISPLAY_NAMES[m["class"]], f"{m['precision']:.2f}", f"{m['recall']:.2f}",
                     f"{m['f1']:.2f}", f"{m['per_class_accuracy']:.2f}"] for m in metrics["per_class"]]
        cls_rows.append(["Accuracy", "", "", "", f"{metrics['accuracy']:.2f}"])
        _write_csv(tables / "classification.csv", cls_header, cls_rows)
        md += ["## Classifier performance (test split)", "", _md_table(cls_header, cls_rows), ""]
        md += [f"Overall test accuracy: {clf['test_accuracy']:.4f}", ""]
        render_confusion_png(cm, figures / "confusion_matrix.png")
        history = clf.get("history") or []
        if history:
            _write_csv(tables / "training_history.csv",
                       ["epoch", "train_loss", "train_acc", "test_acc"],
                       [[e["epoch"], f"{e['train_loss']:.6f}", f"{e['train_acc']:.4f}",
                         f"{e.get('test_acc', ''):.4f}" if "test_acc" in e else ""] for e in history])
            render_history_png(history, figures / "training_history.png")
    else:
        warnings_list.append("classifier section missing (skipped or not yet trained)")

    fld = data.get("field")
    if fld:
        md += ["## Field deck predictions", "",
               f"Clustered defective points: {fld['n_defective']}; sequence predictions: "
               f"{fld['n_predictions']}.", ""]
        pct_rows = [[DISPLAY_NAMES[name], f"{fld['percentages'].get(name, 0.0):.1f}%"]
                    for name in CLASS_NAMES]
        _write_csv(tables / "field_percentages.csv", ["Class", "Share of predictions"], pct_rows)
        md += [_md_table(["Class", "Share of predictions"], pct_rows), ""]

    for src in data.get("copy_figures", []):
        src = Path(src)
        shutil.copyfile(src, figures / src.name)

    if warnings_list:
        md += ["## Warnings", ""] + [f"- WARNING: {w}" for w in warnings_list] + [""]

    report_path = out_dir / "report.md"
    report_path.write_text("\n".join(md))
    return report_path
