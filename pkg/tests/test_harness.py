import copy
import csv
import json
from dataclasses import asdict

import pytest
import torch

from interpaug.data import split_patient_level
from interpaug.harness import (
    ExperimentConfig,
    ProtocolError,
    RunRecord,
    SweepError,
    config_from_dict,
    format_dice_with_p,
    load_config,
    obtain_classifier,
    paper_scale,
    run_all_centres,
    run_experiment,
    select_best_p,
    sweep_p,
)

from .conftest import tiny_config


# ---- configuration

def test_config_roundtrip_and_fingerprint(tmp_path):
    cfg = tiny_config(tmp_path)
    back = config_from_dict(json.loads(json.dumps(asdict(cfg))))
    assert back.fingerprint() == cfg.fingerprint()
    moved = copy.deepcopy(cfg)
    moved.output_dir = "/elsewhere"
    assert moved.fingerprint() == cfg.fingerprint()
    other = copy.deepcopy(cfg)
    other.masking.p = 0.6
    assert other.fingerprint() != cfg.fingerprint()


def test_load_config_yaml_and_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("model:\n  kind: sdnet\nmasking:\n  p: 0.6\nepochs:\n  segmentation: 3\n")
    cfg = load_config(path, ["masking.threshold=0.3", "held_out_centre=2", "data.ratios=[0.6, 0.2, 0.2]"])
    assert cfg.model.kind == "sdnet" and cfg.masking_mode == "anatomy"
    assert cfg.masking.p == 0.6 and cfg.masking.threshold == 0.3
    assert cfg.held_out_centre == 2 and cfg.data.ratios == (0.6, 0.2, 0.2)
    with pytest.raises(ValueError, match="unknown config key"):
        load_config(None, ["masking.prob=0.3"])
    with pytest.raises(ValueError, match="key=value"):
        load_config(None, ["masking.p"])


def test_config_validation():
    with pytest.raises(ValueError):
        config_from_dict({"masking": {"p": 1.5}})
    with pytest.raises(ValueError, match="incompatible"):
        config_from_dict({"model": {"kind": "unet"}, "masking": {"mode": "anatomy"}})
    with pytest.raises(ValueError):
        config_from_dict({"select": "first"})


def test_output_root_env(monkeypatch):
    monkeypatch.setenv("INTERPAUG_OUTPUT_ROOT", "/tmp/from-env")
    assert ExperimentConfig().resolved().output_dir == "/tmp/from-env"
    assert ExperimentConfig(output_dir="x").resolved().output_dir == "x"


def test_paper_scale_settings():
    cfg = paper_scale(config_from_dict({"model": {"kind": "deeplab"}}))
    assert cfg.optim.lr == 1e-5 and cfg.epochs.segmentation == 300
    assert cfg.data.layout.size == (256, 256)
    assert cfg.classifier.backbone.arch == "resnet50" and cfg.model.backbone == "resnet101"


def test_run_name():
    cfg = ExperimentConfig(held_out_centre=3)
    cfg.masking.p = 0.4
    assert cfg.run_name().startswith("unet_c3_p40_")
    cfg.masking.enabled = False
    assert cfg.run_name().startswith("unet_c3_baseline_")


# ---- sweeps and formatting

def test_select_best_p_tie_breaks_to_smallest():
    assert select_best_p({0.6: 0.8, 0.4: 0.8, 0.5: 0.7}) == 0.4
    assert select_best_p({0.6: 0.9, 0.4: 0.8}) == 0.6
    with pytest.raises(ValueError):
        select_best_p({})


def test_format_dice_with_p():
    assert format_dice_with_p(0.7470, 0.4) == "0.7470 (40%)"
    assert format_dice_with_p(0.7054, None) == "0.7054"


# ---- experiments

def test_run_experiment_writes_artifacts(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    rec = run_experiment(cfg, small_ds)
    run_dir = tmp_path / cfg.run_name()
    for name in ("config.json", "split.json", "record.json", "best.pt", "last.pt"):
        assert (run_dir / name).exists(), name
    assert set(rec.metrics.per_set) == {"val", "test_in", "test_out"}
    assert rec.metrics.per_set["test_out"]["n"] == 24
    assert 0 < rec.masked_fraction < 1
    assert rec.classifier["val_accuracy"] is not None
    back = RunRecord.load(run_dir)
    assert back.to_dict() == json.loads(json.dumps(rec.to_dict()))
    assert config_from_dict(back.config).fingerprint() == rec.fingerprint
    with open(tmp_path / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["set"] for r in rows} == {"val", "test_in", "test_out"}


def test_classifier_is_shared_and_cached(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    r1 = run_experiment(cfg, small_ds)
    cfg2 = copy.deepcopy(cfg)
    cfg2.masking.p = 0.6
    r2 = run_experiment(cfg2, small_ds)
    assert r1.classifier["path"] == r2.classifier["path"]
    assert r1.classifier["weights_hash"] == r2.classifier["weights_hash"]


def test_resume_matches_uninterrupted_run(tmp_path, small_ds):
    cfg = tiny_config(tmp_path / "full")
    cfg.masking.enabled = False
    cfg.epochs.segmentation = 3
    full = run_experiment(cfg, small_ds)

    cut = copy.deepcopy(cfg)
    cut.output_dir = str(tmp_path / "cut")
    partial = run_experiment(cut, small_ds, stop_after=1)
    assert len(partial.loss_curve) == 1
    resumed = run_experiment(cut, small_ds)
    assert resumed.loss_curve == full.loss_curve
    assert resumed.metrics.per_set == full.metrics.per_set
    assert resumed.aug_digest == full.aug_digest


def test_missing_classifier_is_a_protocol_error(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    cfg.classifier.auto_pretrain = False
    with pytest.raises(ProtocolError, match="not found"):
        run_experiment(cfg, small_ds)


def test_classifier_from_another_split_is_rejected(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    split1 = split_patient_level(small_ds, 1, seed=cfg.seed)
    _, path = obtain_classifier(cfg.resolved(), small_ds, split1)
    other = copy.deepcopy(cfg)
    other.held_out_centre = 2
    other.classifier.checkpoint = str(path)
    with pytest.raises(ProtocolError, match="split"):
        run_experiment(other, small_ds)


def test_sdnet_and_deeplab_runs(tmp_path, small_ds):
    for kind in ("sdnet", "deeplab"):
        cfg = tiny_config(tmp_path)
        cfg.model.kind = kind
        cfg.epochs.segmentation = 1
        rec = run_experiment(cfg, small_ds)
        assert rec.config["masking"]["mode"] == ("anatomy" if kind == "sdnet" else "input")
        assert 0.0 <= rec.dice() <= 1.0


def test_sweep_p(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    cfg.epochs.segmentation = 1
    res = sweep_p(cfg, (0.4, 0.6), small_ds)
    assert set(res.runs) == {0.4, 0.6}
    assert res.best_p == select_best_p({p: r.dice() for p, r in res.runs.items()})
    assert "*" in res.table()
    blob = json.loads((tmp_path / "sweep_unet_c1.json").read_text())
    assert blob["best_p"] == res.best_p and blob["error"] is None


def test_sweep_failure_persists_partial_results(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    cfg.epochs.segmentation = 1
    with pytest.raises(SweepError):
        sweep_p(cfg, (0.4, 1.5), small_ds)
    blob = json.loads((tmp_path / "sweep_unet_c1.json").read_text())
    assert list(blob["runs"]) == ["0.4"] and "1.5" in blob["error"]


def test_run_all_centres(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    cfg.epochs.segmentation = 1
    rows = run_all_centres(cfg, None, small_ds)
    assert [r.centre for r in rows] == [1, 2, 3]
    assert all(r.error is None for r in rows)
    for r in rows:
        assert r.baseline.split_hash == r.augmented.split_hash
        assert r.baseline.aug_digest == r.augmented.aug_digest
    blob = json.loads((tmp_path / "all_centres_unet.json").read_text())
    assert len(blob["rows"]) == 3 and blob["rows"][0]["augmented"]["p"] == cfg.masking.p


def test_run_all_centres_continues_past_failures(tmp_path, small_ds, monkeypatch):
    import interpaug.harness as h

    real = h.run_experiment

    def flaky(cfg, ds=None, log_fn=None, stop_after=None):
        if cfg.held_out_centre == 2:
            raise RuntimeError("boom")
        return real(cfg, ds, log_fn, stop_after)

    monkeypatch.setattr(h, "run_experiment", flaky)
    cfg = tiny_config(tmp_path)
    cfg.epochs.segmentation = 1
    rows = run_all_centres(cfg, None, small_ds)
    assert rows[1].error and "boom" in rows[1].error
    assert rows[0].error is None and rows[2].error is None


def test_no_gradients_reach_the_classifier(tmp_path, small_ds):
    cfg = tiny_config(tmp_path)
    rec = run_experiment(cfg, small_ds)
    from interpaug.classifier import ClassifierCheckpoint

    assert ClassifierCheckpoint.load(rec.classifier["path"]).weights_hash == rec.classifier["weights_hash"]
    assert torch.load(rec.checkpoints["best"])  # segmentation checkpoint is loadable
