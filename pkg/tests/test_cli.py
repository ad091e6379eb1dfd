import json

import pytest

from interpaug.cli import build_config, main, make_parser


def _run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_flags_override_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("masking:\n  p: 0.6\n")
    args = make_parser().parse_args([
        "train-seg", "--config", str(path), "--model", "sdnet", "--held-out-centre", "2",
        "--threshold", "0.4", "--set", "optim.batch_size=2", "--no-masking",
    ])
    cfg = build_config(args)
    assert cfg.model.kind == "sdnet" and cfg.held_out_centre == 2
    assert cfg.masking.p == 0.6 and cfg.masking.threshold == 0.4
    assert cfg.optim.batch_size == 2 and not cfg.masking.enabled


def test_paper_scale_flag():
    cfg = build_config(make_parser().parse_args(["train-seg", "--paper-scale", "--seg-epochs", "5"]))
    assert cfg.optim.lr == 1e-5 and cfg.epochs.segmentation == 5


def test_synth_preview_pretrain_cache(tmp_path, capsys):
    data = tmp_path / "data"
    code, out = _run(capsys, "synth-data", "--out", str(data), "--per-centre", "24", "--size", "32", "--seed", "3")
    assert code == 0 and "72 samples" in out.out

    code, out = _run(capsys, "filter-preview", "--data", str(data), "--out", str(tmp_path / "prev"), "--n", "1")
    assert code == 0 and len(list((tmp_path / "prev").glob("*.png"))) == 3

    common = ["--data", str(data), "--out", str(tmp_path / "runs"), "--held-out-centre", "1"]
    code, out = _run(capsys, "pretrain-classifier", *common, "--epochs", "2", "--batch-size", "8")
    assert code == 0
    info = json.loads(out.out)
    assert info["checkpoint"].endswith(".pt")

    cams = tmp_path / "cams.bin"
    code, out = _run(capsys, "cache-cams", "--classifier", info["checkpoint"], "--data", str(data),
                     "--split", info["split"], "--out", str(cams), "--preview", str(tmp_path / "panel.png"))
    assert code == 0 and cams.exists() and (tmp_path / "panel.png").exists()
    assert "cached" in out.out


def test_train_evaluate_and_report(tmp_path, capsys):
    runs = tmp_path / "runs"
    flags = ["--out", str(runs), "--seg-epochs", "1", "--classifier-epochs", "1", "--batch-size", "8",
             "--set", "data.synthetic.samples_per_centre=24", "--set", "data.synthetic.image_size=32",
             "--set", "data.layout.size=[32, 32]", "--set", "model.width=8"]
    code, out = _run(capsys, "train-seg", *flags, "--p", "0.4")
    assert code == 0 and "test_out," in out.out

    run_dir = next(p for p in runs.iterdir() if p.name.startswith("unet_c1_p40"))
    code, out = _run(capsys, "evaluate", "--run", str(run_dir))
    assert code == 0 and "test_out," in out.out

    code, out = _run(capsys, "run-all", *flags, "--no-sweep")
    assert code == 0 and "centre 3" in out.out

    code, out = _run(capsys, "report", "--results", str(runs))
    assert code == 0
    report = runs / "report"
    assert (report / "table_unet.csv").exists() and (report / "centres_unet.png").exists()
    assert (report / "curves_unet.png").exists()


def test_errors_map_to_exit_codes(tmp_path, capsys):
    code, out = _run(capsys, "train-seg", "--p", "1.5", "--out", str(tmp_path))
    assert code == 1 and "error" in out.err
    code, out = _run(capsys, "train-seg", "--out", str(tmp_path), "--classifier", str(tmp_path / "nope"))
    assert code == 3 and "protocol violation" in out.err


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        make_parser().parse_args(["dance"])
