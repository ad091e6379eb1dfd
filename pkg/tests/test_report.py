import csv
import json

import numpy as np

from interpaug import plotting
from interpaug.report import build_report, render_table, table_rows, write_delimited

ROWS = [
    {"centre": 1, "baseline": {"dice": 0.70, "recall": 0.6, "accuracy": 0.9, "split_hash": "h1"},
     "augmented": {"dice": 0.75, "recall": 0.7, "accuracy": 0.92, "p": 0.4, "split_hash": "h1"}},
    {"centre": 2, "baseline": {"dice": 0.80, "recall": 0.7, "accuracy": 0.95, "split_hash": "h2"},
     "augmented": {"dice": 0.78, "recall": 0.7, "accuracy": 0.94, "p": 0.6, "split_hash": "h2"}},
    {"centre": 3, "baseline": None, "augmented": None, "error": "RuntimeError: boom"},
]


def test_table_rows_flatten():
    rows = table_rows("unet", ROWS)
    assert rows[0]["augmented_dice"] == 0.75 and rows[0]["p"] == 0.4 and rows[0]["split_hash"] == "h1"
    assert rows[2]["baseline_dice"] is None and "boom" in rows[2]["error"]


def test_render_table_stars_the_better_cell():
    text = render_table("unet", ROWS).splitlines()
    assert "0.7500 (40%)*" in text[3]
    assert "0.8000*" in text[4] and "0.7800 (60%) " in text[4]
    assert "FAILED" in text[5]


def test_write_delimited(tmp_path):
    path = write_delimited(table_rows("unet", ROWS), tmp_path / "sub" / "t.csv")
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 and rows[1]["augmented_dice"] == "0.78" and rows[2]["baseline_dice"] == ""


def test_build_report_without_run_dirs(tmp_path):
    (tmp_path / "all_centres_unet.json").write_text(json.dumps({"model": "unet", "rows": ROWS}))
    written = build_report(tmp_path)
    for key in ("table_unet_csv", "table_unet_txt", "fig_unet"):
        assert written[key].exists() and written[key].stat().st_size > 0
    assert "curves_unet" not in written


def test_saliency_panel_and_sweep_plot(tmp_path):
    img = np.random.default_rng(0).random((16, 16, 3))
    cam = img[..., 0]
    p = plotting.plot_saliency_panel([img], [cam], [cam < 0.5], tmp_path / "panel.png")
    assert p.exists()
    rows = [{"p": 0.4, "dice": 0.7, "recall": 0.6, "accuracy": 0.9, "best": True},
            {"p": 0.6, "dice": 0.6, "recall": 0.5, "accuracy": 0.8, "best": False}]
    assert plotting.plot_sweep(rows, tmp_path / "sweep.png").exists()
