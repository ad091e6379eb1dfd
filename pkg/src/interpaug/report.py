"""Result tables (delimited + aligned text) and report generation from a results directory."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from . import plotting
from .harness import format_dice_with_p

TABLE_FIELDS = (
    "model", "centre",
    "baseline_dice", "baseline_recall", "baseline_accuracy",
    "augmented_dice", "augmented_recall", "augmented_accuracy", "p",
    "split_hash", "error",
)


def table_rows(model: str, rows: Sequence[dict]) -> list[dict]:
    out = []
    for r in rows:
        b, a = r.get("baseline") or {}, r.get("augmented") or {}
        out.append({
            "model": model,
            "centre": r["centre"],
            "baseline_dice": b.get("dice"), "baseline_recall": b.get("recall"), "baseline_accuracy": b.get("accuracy"),
            "augmented_dice": a.get("dice"), "augmented_recall": a.get("recall"), "augmented_accuracy": a.get("accuracy"),
            "p": a.get("p"),
            "split_hash": b.get("split_hash") or a.get("split_hash"),
            "error": r.get("error") or "",
        })
    return out


def write_delimited(rows: Sequence[dict], path: str | Path, fields: Sequence[str] = TABLE_FIELDS) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fields})
    return path


def _num(v) -> str:
    return "-" if v is None else f"{v:.4f}"


def render_table(model: str, rows: Sequence[dict]) -> str:
    """Aligned baseline-vs-augmented table, best Dice per row starred."""
    head = f"{'Out-dist set':<13}| {model:^30} | {model + ' + saliency masking':^36}"
    sub = f"{'':<13}| {'Dice':>8} {'Recall':>9} {'Accuracy':>9}  | {'Dice':>14} {'Recall':>9} {'Accuracy':>9} "
    lines = [head, sub, "-" * len(sub)]
    for r in table_rows(model, rows):
        if r["error"] and r["augmented_dice"] is None:
            lines.append(f"{'centre ' + str(r['centre']):<13}| FAILED: {r['error'][:60]}")
            continue
        bd, ad = r["baseline_dice"], r["augmented_dice"]
        star_b = "*" if bd is not None and ad is not None and bd > ad else " "
        star_a = "*" if bd is not None and ad is not None and ad >= bd else " "
        a_cell = "-" if ad is None else format_dice_with_p(ad, r["p"])
        lines.append(
            f"{'centre ' + str(r['centre']):<13}| {_num(bd):>7}{star_b} {_num(r['baseline_recall']):>9} {_num(r['baseline_accuracy']):>9}  "
            f"| {a_cell:>13}{star_a} {_num(r['augmented_recall']):>9} {_num(r['augmented_accuracy']):>9} "
        )
    return "\n".join(lines)


def build_report(results_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Render every ``all_centres_*.json`` / ``sweep_*.json`` under ``results_dir``.

    Writes ``table_<model>.csv`` / ``.txt`` and PNG figures; returns the paths.
    """
    from .harness import RunRecord

    results_dir = Path(results_dir)
    out_dir = Path(out_dir or results_dir / "report")
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for f in sorted(results_dir.glob("all_centres_*.json")):
        blob = json.loads(f.read_text())
        model, rows = blob["model"], blob["rows"]
        written[f"table_{model}_csv"] = write_delimited(table_rows(model, rows), out_dir / f"table_{model}.csv")
        txt = out_dir / f"table_{model}.txt"
        txt.write_text(render_table(model, rows) + "\n")
        written[f"table_{model}_txt"] = txt
        written[f"fig_{model}"] = plotting.plot_centre_comparison(rows, out_dir / f"centres_{model}.png", title=model)
        curves = {}
        for r in rows:
            for kind in ("baseline", "augmented"):
                cell = r.get(kind)
                if cell and cell.get("run_dir") and Path(cell["run_dir"], "record.json").exists():
                    rec = RunRecord.load(cell["run_dir"])
                    curves[f"c{r['centre']} {kind}"] = {"loss": rec.loss_curve, "val": rec.val_curve}
        if curves:
            written[f"curves_{model}"] = plotting.plot_curves(curves, out_dir / f"curves_{model}.png")
    for f in sorted(results_dir.glob("sweep_*.json")):
        blob = json.loads(f.read_text())
        rows = []
        for p, run_dir in sorted(blob["runs"].items(), key=lambda kv: float(kv[0])):
            rec = RunRecord.load(run_dir)
            m = rec.metrics.per_set["test_out"]
            rows.append({"p": float(p), **{k: m[k] for k in ("dice", "recall", "accuracy")}, "best": float(p) == blob["best_p"]})
        if rows:
            stem = f.stem
            written[f"{stem}_csv"] = write_delimited(rows, out_dir / f"{stem}.csv", ("p", "dice", "recall", "accuracy", "best"))
            written[stem] = plotting.plot_sweep(rows, out_dir / f"{stem}.png", title=stem)
    return written
