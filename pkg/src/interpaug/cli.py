"""Command-line entry point: ``interpaug <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .harness import (
    SWEEP_VALUES,
    ExperimentConfig,
    ProtocolError,
    RunRecord,
    config_from_dict,
    evaluate_split,
    load_config,
    load_source,
    obtain_classifier,
    paper_scale,
    run_all_centres,
    run_experiment,
    set_by_path,
    sweep_p,
)

log = logging.getLogger("interpaug")

# flag -> config key
FLAG_KEYS = {
    "data": "data.path",
    "model": "model.kind",
    "held_out_centre": "held_out_centre",
    "p": "masking.p",
    "threshold": "masking.threshold",
    "seed": "seed",
    "out": "output_dir",
    "seg_epochs": "epochs.segmentation",
    "classifier_epochs": "epochs.classifier",
    "lr": "optim.lr",
    "batch_size": "optim.batch_size",
    "classifier": "classifier.checkpoint",
}


def _experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON experiment config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--data", help="dataset root (default: synthetic)")
    p.add_argument("--model", choices=("unet", "deeplab", "sdnet"))
    p.add_argument("--held-out-centre", type=int)
    p.add_argument("--p", type=float, help="masking probability")
    p.add_argument("--threshold", type=float, help="GradCAM binarization threshold")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output root (env INTERPAUG_OUTPUT_ROOT)")
    p.add_argument("--seg-epochs", type=int)
    p.add_argument("--classifier-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--classifier", help="explicit classifier checkpoint")
    p.add_argument("--no-masking", action="store_true", help="baseline run")
    p.add_argument("--paper-scale", action="store_true", help="256px inputs, ResNet backbones, lr 1e-5, 300 epochs")


def build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.paper_scale:
        cfg = paper_scale(cfg)
    raw = asdict(cfg)
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            set_by_path(raw, key, val)
    if getattr(args, "no_masking", False):
        set_by_path(raw, "masking.enabled", False)
    import yaml

    for item in args.set:
        key, _, val = item.partition("=")
        set_by_path(raw, key.strip(), yaml.safe_load(val))
    return config_from_dict(raw)


def _print_report(rec: RunRecord) -> None:
    m = rec.metrics
    print(f"# {m.model} held-out centre {m.held_out_centre} p={m.p} ({rec.run_dir})")
    print("set,dice,recall,accuracy,n")
    for name, v in m.per_set.items():
        print(f"{name},{v['dice']:.4f},{v['recall']:.4f},{v['accuracy']:.4f},{v['n']}")


def cmd_synth_data(args) -> int:
    from .data import SynthConfig, generate_synthetic, save_dataset

    cfg = SynthConfig(num_centres=args.centres, samples_per_centre=args.per_centre, image_size=args.size)
    ds = generate_synthetic(cfg, args.seed)
    path = save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples over centres {ds.centres} -> {path}")
    return 0


def cmd_filter_preview(args) -> int:
    from PIL import Image

    from .data import load_dataset
    from .filters import sobel

    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    picked = []
    for c in ds.centres:
        picked += ds.ids(c)[: args.n]
    for sid in picked:
        edge = sobel(ds[sid].image, args.mode)
        both = np.concatenate([ds[sid].image, edge], axis=1)
        Image.fromarray(np.round(both * 255).astype(np.uint8)).save(out / f"{sid.replace(':', '_')}.png")
    print(f"wrote {len(picked)} previews to {out}")
    return 0


def cmd_pretrain_classifier(args) -> int:
    from .data import split_patient_level

    if args.epochs is not None:
        args.classifier_epochs = args.epochs
    cfg = build_config(args).resolved()
    ds = load_source(cfg)
    split = split_patient_level(ds, cfg.held_out_centre, cfg.data.ratios, cfg.seed)
    ckpt, path = obtain_classifier(cfg, ds, split, log.info)
    split_path = path.parent / f"{path.name}_split.json"
    split.save(split_path)
    print(json.dumps({
        "checkpoint": str(path.with_suffix(".pt")),
        "split": str(split_path),
        "split_hash": split.hash(),
        "weights_hash": ckpt.weights_hash,
        "val_accuracy": ckpt.metadata.get("val_accuracy"),
    }, indent=1))
    return 0


def cmd_cache_cams(args) -> int:
    from .classifier import ClassifierCheckpoint
    from .data import LayoutConfig, SplitSpec, load_dataset
    from .saliency import CamCache, compute_saliency

    ckpt = ClassifierCheckpoint.load(args.classifier)
    split = SplitSpec.load(args.split)
    if ckpt.split_hash != split.hash():
        raise ProtocolError(f"classifier split {ckpt.split_hash} != {split.hash()}")
    ds = load_dataset(args.data, LayoutConfig(size=tuple(ckpt.input_size)))
    model = ckpt.build()
    ids = getattr(split, args.set_name)
    records = compute_saliency(model, ds, ids, args.threshold, args.target)
    cache = CamCache(args.out, ckpt.weights_hash, args.threshold)
    for sid, rec in records.items():
        cache.put(sid, rec)
    cache.save()
    blocked = float(np.mean([1 - r.keep_mask.mean() for r in records.values()]))
    print(f"cached {len(records)} CAMs -> {args.out} (mean blocked fraction {blocked:.3f})")
    if args.preview:
        from .plotting import plot_saliency_panel

        show = list(records)[: args.n_preview]
        plot_saliency_panel([ds[s].image for s in show], [records[s].cam for s in show],
                            [records[s].keep_mask for s in show], args.preview, titles=show)
        print(f"preview -> {args.preview}")
    return 0


def cmd_train_seg(args) -> int:
    rec = run_experiment(build_config(args), log_fn=log.info)
    _print_report(rec)
    return 0


def cmd_evaluate(args) -> int:
    import torch

    from .data import NormConfig, SplitSpec
    from .metrics import MetricsReport
    from .segmodels import build_segmodel

    rec = RunRecord.load(args.run)
    cfg = config_from_dict(rec.config)
    if args.data:
        cfg.data.path = args.data
    ds = load_source(cfg)
    split = SplitSpec.load(Path(rec.run_dir) / "split.json")
    model = build_segmodel(cfg.model)
    model.load_state_dict(torch.load(args.checkpoint or rec.checkpoints["best"], map_location="cpu"))
    report = MetricsReport(cfg.model.kind, cfg.held_out_centre, cfg.masking.p if cfg.masking.enabled else None,
                           evaluate_split(model, ds, split, NormConfig(cfg.data.norm)), rec.fingerprint)
    rec.metrics = report
    _print_report(rec)
    return 0


def cmd_sweep_p(args) -> int:
    cfg = build_config(args)
    cfg.masking.enabled = True
    result = sweep_p(cfg, args.values, log_fn=log.info)
    print(result.table())
    print(f"best p = {result.best_p}")
    return 0


def cmd_run_all(args) -> int:
    from .report import render_table

    cfg = build_config(args)
    values = None if args.no_sweep else args.values
    rows = run_all_centres(cfg, values, log_fn=log.info)
    print(render_table(cfg.model.kind, [r.to_dict() for r in rows]))
    return 0 if all(r.error is None for r in rows) else 2


def cmd_report(args) -> int:
    from .report import build_report

    written = build_report(args.results, args.out)
    for name, path in written.items():
        print(f"{name}: {path}")
        if path.suffix == ".txt":
            print(path.read_text())
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="interpaug", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic multi-centre dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--centres", type=int, default=3)
    p.add_argument("--per-centre", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("filter-preview", help="write image | Sobel side-by-sides")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=4, help="samples per centre")
    p.add_argument("--mode", choices=("grayscale", "per-channel"), default="grayscale")
    p.set_defaults(func=cmd_filter_preview)

    p = sub.add_parser("pretrain-classifier", help="train the centre classifier for one split")
    _experiment_args(p)
    p.add_argument("--epochs", type=int, help="classifier epochs")
    p.set_defaults(func=cmd_pretrain_classifier)

    p = sub.add_parser("cache-cams", help="compute and cache GradCAM keep-masks")
    p.add_argument("--classifier", required=True, help="checkpoint path (.pt/.json pair)")
    p.add_argument("--data", required=True)
    p.add_argument("--split", required=True, help="split JSON written by pretrain-classifier")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--target", choices=("predicted", "true"), default="predicted")
    p.add_argument("--set-name", choices=("train", "val", "test_in", "test_out"), default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--preview", help="optional PNG panel of image / CAM / keep-mask")
    p.add_argument("--n-preview", type=int, default=6)
    p.set_defaults(func=cmd_cache_cams)

    p = sub.add_parser("train-seg", help="run one leave-one-centre-out experiment")
    _experiment_args(p)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("evaluate", help="re-evaluate a finished run")
    p.add_argument("--run", required=True, help="run directory or record.json")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-p", help="sweep the masking probability")
    _experiment_args(p)
    p.add_argument("--values", type=float, nargs="+", default=list(SWEEP_VALUES))
    p.set_defaults(func=cmd_sweep_p)

    p = sub.add_parser("run-all", help="baseline vs augmented for every held-out centre")
    _experiment_args(p)
    p.add_argument("--values", type=float, nargs="+", default=list(SWEEP_VALUES))
    p.add_argument("--no-sweep", action="store_true", help="use the single configured p")
    p.set_defaults(func=cmd_run_all)

    p = sub.add_parser("report", help="render tables and figures from a results directory")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except ProtocolError as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return 3
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
