"""Leave-one-centre-out experiment orchestration.

One experiment: split -> (pretrain centre classifier) -> cache keep-masks ->
train a segmentation model with standard augmentation plus saliency-guided
masking -> evaluate on val / in-distribution test / held-out centre.
"""
from __future__ import annotations

import copy
import dataclasses
import fcntl
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import __version__
from .augmentation import MaskingPolicy, draw_mask_decision
from .classifier import (
    BackboneConfig,
    ClassifierCheckpoint,
    ClassifierTrainConfig,
    build_classifier,
    evaluate_classifier,
    train_classifier,
)
from .data import (
    AugmentConfig,
    LayoutConfig,
    MultiCentreDataset,
    NormConfig,
    SplitSpec,
    SynthConfig,
    apply_augment,
    generate_synthetic,
    iter_batches,
    load_dataset,
    sample_augment_params,
    split_patient_level,
    to_tensor,
)
from .metrics import MetricsReport, aggregate, sample_metrics
from .saliency import CamCache, keep_masks_for
from .seeding import seed_everything, sha256_json, state_dict_hash, stream_seed, substream
from .segmodels import SDNet, SegModelConfig, build_segmodel, dice_loss, sdnet_losses

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "INTERPAUG_OUTPUT_ROOT"
SWEEP_VALUES = (0.4, 0.5, 0.6)
EVAL_SETS = ("val", "test_in", "test_out")


class ProtocolError(RuntimeError):
    """The leave-one-centre-out protocol would be violated."""


class SweepError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration

@dataclass
class DataConfig:
    path: str | None = None  # dataset root; None -> synthetic
    seed: int = 0  # synthetic generation seed
    synthetic: SynthConfig = field(default_factory=SynthConfig)
    layout: LayoutConfig = field(default_factory=lambda: LayoutConfig(size=(64, 64)))
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    norm: str = "unit"


@dataclass
class MaskingConfig:
    enabled: bool = True
    p: float = 0.5
    threshold: float = 0.5
    mode: str | None = None  # derived from the model kind when unset
    target: str = "predicted"  # "predicted" | "true"
    cache: bool = True


@dataclass
class ClassifierConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    lr: float = 1e-3
    augment: bool = True
    sobel_mode: str = "grayscale"
    checkpoint: str | None = None  # explicit checkpoint; otherwise shared per split
    auto_pretrain: bool = True


@dataclass
class OptimConfig:
    lr: float = 1e-3
    batch_size: int = 4


@dataclass
class EpochsConfig:
    classifier: int = 10
    segmentation: int = 15


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: SegModelConfig = field(default_factory=SegModelConfig)
    held_out_centre: int = 1
    masking: MaskingConfig = field(default_factory=MaskingConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    epochs: EpochsConfig = field(default_factory=EpochsConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    select: str = "best-val"  # "best-val" | "last"
    output_dir: str | None = None
    resume: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def masking_mode(self) -> str:
        return "anatomy" if self.model.kind == "sdnet" else "input"

    def validate(self) -> None:
        m = self.masking
        if not 0.0 <= m.p <= 1.0:
            raise ValueError(f"masking.p must lie in [0, 1], got {m.p}")
        if m.mode is not None and m.mode != self.masking_mode:
            raise ValueError(f"masking.mode={m.mode!r} is incompatible with model kind {self.model.kind!r}")
        if self.select not in ("best-val", "last"):
            raise ValueError(f"select must be 'best-val' or 'last', got {self.select!r}")
        if m.target not in ("predicted", "true"):
            raise ValueError(f"masking.target must be 'predicted' or 'true', got {m.target!r}")

    def resolved(self) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        cfg.masking.mode = cfg.masking_mode
        if cfg.output_dir is None:
            cfg.output_dir = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        d = self.resolved().to_dict()
        for k in ("output_dir", "resume"):
            d.pop(k)
        d["classifier"].pop("auto_pretrain")
        return sha256_json({"config": d, "version": __version__, "seed": self.seed})

    def run_name(self) -> str:
        tag = f"p{round(self.masking.p * 100):02d}" if self.masking.enabled else "baseline"
        return f"{self.model.kind}_c{self.held_out_centre}_{tag}_{self.fingerprint()[:10]}"


def _coerce(current, value):
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(_coerce(current[0], v) if current else v for v in value)
    if isinstance(current, bool) and isinstance(value, str):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(current, float) and isinstance(value, (int, str)) and not isinstance(value, bool):
        return float(value)
    if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, str):
        return int(value)
    return value


def _build(cls, d: dict):
    obj = cls.__new__(cls)
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    for k in d:
        if k not in names:
            raise ValueError(f"unknown config key {cls.__name__}.{k}")
    for f in dataclasses.fields(cls):
        cur = getattr(defaults, f.name)
        if f.name not in d:
            setattr(obj, f.name, cur)
            continue
        v = d[f.name]
        if dataclasses.is_dataclass(cur) and isinstance(v, dict):
            v = _build(type(cur), v)
        else:
            v = _coerce(cur, v)
        setattr(obj, f.name, v)
    if hasattr(obj, "__post_init__"):
        obj.__post_init__()
    return obj


def config_from_dict(d: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, d or {})


def set_by_path(d: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def load_config(path: str | Path | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read a YAML/JSON config and apply ``key.path=value`` overrides."""
    import yaml

    raw = yaml.safe_load(Path(path).read_text()) if path else {}
    raw = raw or {}
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        set_by_path(raw, key.strip(), yaml.safe_load(val))
    return config_from_dict(raw)


def paper_scale(cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    """Full-size settings: 256x256 inputs, ResNet backbones, lr 1e-5, 300/10 epochs."""
    cfg = copy.deepcopy(cfg or ExperimentConfig())
    cfg.data.layout.size = (256, 256)
    cfg.data.synthetic.image_size = 256
    cfg.optim = OptimConfig(lr=1e-5, batch_size=4)
    cfg.epochs = EpochsConfig(classifier=10, segmentation=300)
    cfg.classifier.lr = 1e-5
    cfg.classifier.backbone = BackboneConfig(arch="resnet50", pretrained_weights=cfg.classifier.backbone.pretrained_weights)
    cfg.model.depth, cfg.model.width = 4, 64
    if cfg.model.kind == "deeplab":
        cfg.model.backbone = "resnet101"
    return cfg


# --------------------------------------------------------------------------
# records

@dataclass
class RunRecord:
    fingerprint: str
    run_dir: str
    config: dict
    split_hash: str
    classifier: dict | None
    checkpoints: dict
    loss_curve: list[float]
    val_curve: list[float]
    best_epoch: int
    metrics: MetricsReport
    train_ids_seen: int
    masked_fraction: float | None
    aug_digest: str
    seconds: float
    extra: dict = field(default_factory=dict)

    def dice(self, set_name: str = "test_out") -> float:
        return self.metrics.per_set[set_name]["dice"]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metrics"] = self.metrics.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        d["metrics"] = MetricsReport.from_dict(d["metrics"])
        return cls(**d)

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path or Path(self.run_dir) / "record.json")
        path.write_text(json.dumps(self.to_dict(), indent=1))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        path = Path(path)
        if path.is_dir():
            path = path / "record.json"
        return cls.from_dict(json.loads(path.read_text()))


RESULT_FIELDS = ("model", "held_out_centre", "p", "set", "dice", "recall", "accuracy", "n", "fingerprint")


def append_results(root: str | Path, report: MetricsReport) -> Path:
    """Append report rows to ``root/results.csv`` under an exclusive file lock."""
    import csv

    path = Path(root) / "results.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a+", newline="") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            fh.seek(0, os.SEEK_END)
            writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
            if fh.tell() == 0:
                writer.writeheader()
            writer.writerows(report.rows())
            fh.flush()
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)
    return path


# --------------------------------------------------------------------------
# pieces of one experiment

def load_source(cfg: ExperimentConfig) -> MultiCentreDataset:
    if cfg.data.path:
        return load_dataset(cfg.data.path, cfg.data.layout)
    return generate_synthetic(cfg.data.synthetic, cfg.data.seed)


def classifier_path(cfg: ExperimentConfig, split: SplitSpec) -> Path:
    if cfg.classifier.checkpoint:
        return Path(cfg.classifier.checkpoint)
    tag = sha256_json({"split": split.hash(), "seed": cfg.seed, "clf": asdict(cfg.classifier), "epochs": cfg.epochs.classifier})
    return Path(cfg.resolved().output_dir) / "classifiers" / f"clf_c{split.held_out_centre}_{tag[:12]}"


def pretrain_classifier(cfg: ExperimentConfig, ds: MultiCentreDataset, split: SplitSpec, log_fn=None) -> ClassifierCheckpoint:
    train_centres = sorted({ds[s].centre for s in split.train})
    seed_everything(cfg.seed)
    torch.manual_seed(stream_seed(cfg.seed, "classifier-init"))
    model = build_classifier(len(train_centres), cfg.classifier.backbone, train_centres)
    tc = ClassifierTrainConfig(
        epochs=cfg.epochs.classifier,
        lr=cfg.classifier.lr,
        batch_size=cfg.optim.batch_size,
        seed=cfg.seed,
        augment=cfg.classifier.augment,
        sobel_mode=cfg.classifier.sobel_mode,
        norm="imagenet" if cfg.classifier.backbone.pretrained_weights else "unit",
    )
    ckpt = train_classifier(model, ds, split, tc, log=log_fn)
    if split.val:
        ckpt.metadata["val_accuracy"] = evaluate_classifier(ckpt.build(), ds, split.val)
    return ckpt


def obtain_classifier(cfg: ExperimentConfig, ds: MultiCentreDataset, split: SplitSpec, log_fn=None) -> tuple[ClassifierCheckpoint, Path]:
    """Load the split's classifier checkpoint, training it first if allowed."""
    path = classifier_path(cfg, split)
    if path.with_suffix(".json").exists():
        ckpt = ClassifierCheckpoint.load(path)
    elif cfg.classifier.checkpoint or not cfg.classifier.auto_pretrain:
        raise ProtocolError(f"classifier checkpoint {path} not found and auto-pretraining is disabled")
    else:
        ckpt = pretrain_classifier(cfg, ds, split, log_fn)
        ckpt.save(path)
    if ckpt.split_hash != split.hash():
        raise ProtocolError(
            f"classifier {path} was trained on split {ckpt.split_hash}, this run uses {split.hash()}"
        )
    return ckpt, path


def predict_batches(model, ds: MultiCentreDataset, ids: Sequence[str], norm: NormConfig, batch_size: int = 32):
    model.eval()
    with torch.no_grad():
        for batch in iter_batches(list(ids), batch_size):
            prob = model(to_tensor([ds[s].image for s in batch], norm))
            for sid, p in zip(batch, prob[:, 0].numpy()):
                yield sid, p


def evaluate_ids(model, ds: MultiCentreDataset, ids: Sequence[str], norm: NormConfig) -> dict[str, float]:
    return aggregate(sample_metrics(p, ds[sid].mask) for sid, p in predict_batches(model, ds, ids, norm))


def evaluate_split(model, ds: MultiCentreDataset, split: SplitSpec, norm: NormConfig) -> dict[str, dict]:
    out = {}
    for name in EVAL_SETS:
        ids = getattr(split, name)
        if ids:
            out[name] = evaluate_ids(model, ds, ids, norm)
    return out


def _val_dice(model, ds, ids, norm) -> float:
    return evaluate_ids(model, ds, ids, norm)["dice"] if ids else 0.0


def train_segmentation(
    cfg: ExperimentConfig,
    ds: MultiCentreDataset,
    split: SplitSpec,
    keep_masks: dict[str, np.ndarray] | None,
    run_dir: Path,
    log_fn: Callable[[str], None] | None = None,
    stop_after: int | None = None,
):
    """Train one segmentation model; resumable from ``run_dir/last.pt``.

    Returns ``(model, state)``, where ``state`` carries curves, the best
    checkpoint and bookkeeping used for protocol checks.
    """
    norm = NormConfig(cfg.data.norm)
    policy = MaskingPolicy(cfg.masking.p, cfg.masking_mode, cfg.seed) if keep_masks is not None else None
    seed_everything(cfg.seed)
    torch.manual_seed(stream_seed(cfg.seed, "init"))
    model = build_segmodel(cfg.model)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.optim.lr)
    train_ids = list(split.train)
    forbidden = set(split.test_out) | set(split.val) | set(split.test_in)

    state = {
        "epoch": 0,
        "loss_curve": [],
        "val_curve": [],
        "best_val": -1.0,
        "best_epoch": -1,
        "best_state": None,
        "seen": [],
        "aug_digest": hashlib.sha256().hexdigest(),
        "masked": 0,
        "drawn": 0,
    }
    last = run_dir / "last.pt"
    if cfg.resume and last.exists():
        saved = torch.load(last, map_location="cpu", weights_only=False)
        if saved.get("fingerprint") == cfg.fingerprint():
            model.load_state_dict(saved["model"])
            opt.load_state_dict(saved["optim"])
            state = saved["state"]
            if log_fn:
                log_fn(f"resuming {run_dir.name} at epoch {state['epoch']}")

    seen = set(state["seen"])
    digest = state["aug_digest"]
    for epoch in range(state["epoch"], cfg.epochs.segmentation):
        if stop_after is not None and epoch >= stop_after:
            break
        torch.manual_seed(stream_seed(cfg.seed, "noise", epoch))
        model.train()
        order = substream(cfg.seed, "order", epoch).permutation(len(train_ids))
        total, n = 0.0, 0
        h = hashlib.sha256(digest.encode())
        for batch in iter_batches([train_ids[i] for i in order], cfg.optim.batch_size):
            if forbidden.intersection(batch):
                raise ProtocolError(f"non-training samples in a training batch: {sorted(forbidden.intersection(batch))}")
            seen.update(batch)
            images, masks, keeps, fired = [], [], [], []
            for sid in batch:
                params = sample_augment_params(substream(cfg.seed, "aug", sid, epoch), cfg.augment)
                h.update(repr((sid, params)).encode())
                keep = keep_masks.get(sid) if keep_masks is not None else None
                s, keep = apply_augment(ds[sid], keep, params)
                images.append(s.image)
                masks.append(s.mask)
                keeps.append(keep)
                fired.append(policy is not None and draw_mask_decision(policy, sid, epoch))
            x = to_tensor(images, norm)
            y = torch.from_numpy(np.stack(masks).astype(np.float32))[:, None]
            mult = torch.ones(len(batch), 1, *x.shape[-2:])
            for i, (k, f) in enumerate(zip(keeps, fired)):
                if f:
                    mult[i, 0] = torch.from_numpy(k.astype(np.float32))
            state["drawn"] += len(batch) if policy is not None else 0
            state["masked"] += sum(fired)

            if isinstance(model, SDNet):
                out = model.forward_all(x, keep_mask=mult if any(fired) else None)
                loss = sdnet_losses(out, x, y, cfg.model.loss_weights)["total"]
            else:
                if any(fired):
                    x = x * mult
                loss = dice_loss(model(x), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            n += len(batch)
        digest = h.hexdigest()
        state["loss_curve"].append(total / max(n, 1))
        vd = _val_dice(model, ds, split.val, norm)
        state["val_curve"].append(vd)
        if vd > state["best_val"] or cfg.select == "last":
            state["best_val"], state["best_epoch"] = vd, epoch
            state["best_state"] = {k: v.detach().clone() for k, v in model.state_dict().items()}
        state["epoch"] = epoch + 1
        state["seen"] = sorted(seen)
        state["aug_digest"] = digest
        torch.save({"fingerprint": cfg.fingerprint(), "model": model.state_dict(), "optim": opt.state_dict(), "state": state}, last)
        if log_fn:
            log_fn(f"{run_dir.name} epoch {epoch + 1}/{cfg.epochs.segmentation} loss={state['loss_curve'][-1]:.4f} val_dice={vd:.4f}")
    return model, state


def run_experiment(
    cfg: ExperimentConfig,
    dataset: MultiCentreDataset | None = None,
    log_fn: Callable[[str], None] | None = None,
    stop_after: int | None = None,
) -> RunRecord:
    """Execute one leave-one-centre-out experiment and persist its record."""
    t0 = time.time()
    cfg = cfg.resolved()
    root = Path(cfg.output_dir)
    run_dir = root / cfg.run_name()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, default=str))

    ds = dataset if dataset is not None else load_source(cfg)
    split = split_patient_level(ds, cfg.held_out_centre, cfg.data.ratios, cfg.seed)
    split.save(run_dir / "split.json")

    keep_masks, clf_info = None, None
    if cfg.masking.enabled:
        ckpt, clf_path = obtain_classifier(cfg, ds, split, log_fn)
        clf = ckpt.build()
        for prm in clf.parameters():
            prm.requires_grad_(False)
        before = state_dict_hash(clf.state_dict())
        cache = None
        if cfg.masking.cache:
            cache = CamCache(
                clf_path.parent / f"{clf_path.name}_th{cfg.masking.threshold:g}_{cfg.masking.target}.cams",
                ckpt.weights_hash,
                cfg.masking.threshold,
            )
        keep_masks = keep_masks_for(clf, ckpt.weights_hash, ds, split.train, cfg.masking.threshold, cfg.masking.target, cache)
        clf_info = {
            "path": str(clf_path),
            "weights_hash": ckpt.weights_hash,
            "val_accuracy": ckpt.metadata.get("val_accuracy"),
            "cache": str(cache.path) if cache is not None else None,
        }

    model, state = train_segmentation(cfg, ds, split, keep_masks, run_dir, log_fn, stop_after)

    if cfg.masking.enabled and state_dict_hash(clf.state_dict()) != before:
        raise ProtocolError("centre classifier weights changed during segmentation training")
    leaked = set(state["seen"]) & (set(split.test_out) | set(split.val) | set(split.test_in))
    if leaked:
        raise ProtocolError(f"held-out / evaluation samples used for training: {sorted(leaked)[:5]}")

    if state["best_state"] is not None:
        model.load_state_dict(state["best_state"])
        torch.save(state["best_state"], run_dir / "best.pt")
    norm = NormConfig(cfg.data.norm)
    report = MetricsReport(
        model=cfg.model.kind,
        held_out_centre=cfg.held_out_centre,
        p=cfg.masking.p if cfg.masking.enabled else None,
        per_set=evaluate_split(model, ds, split, norm),
        fingerprint=cfg.fingerprint(),
    )
    record = RunRecord(
        fingerprint=cfg.fingerprint(),
        run_dir=str(run_dir),
        config=cfg.to_dict(),
        split_hash=split.hash(),
        classifier=clf_info,
        checkpoints={"last": str(run_dir / "last.pt"), "best": str(run_dir / "best.pt")},
        loss_curve=state["loss_curve"],
        val_curve=state["val_curve"],
        best_epoch=state["best_epoch"],
        metrics=report,
        train_ids_seen=len(state["seen"]),
        masked_fraction=state["masked"] / state["drawn"] if state["drawn"] else None,
        aug_digest=state["aug_digest"],
        seconds=time.time() - t0,
    )
    record.save()
    if stop_after is None:
        append_results(root, report)
    return record


# --------------------------------------------------------------------------
# sweeps

def select_best_p(dice_by_p: dict[float, float]) -> float:
    """Highest held-out Dice; ties go to the smallest ``p``."""
    if not dice_by_p:
        raise ValueError("no runs to select from")
    return min(dice_by_p, key=lambda p: (-dice_by_p[p], p))


def format_dice_with_p(dice: float, p: float | None) -> str:
    cell = f"{dice:.4f}"
    return cell if p is None else f"{cell} ({round(p * 100)}%)"


@dataclass
class SweepResult:
    best_p: float
    runs: dict[float, RunRecord]

    @property
    def best(self) -> RunRecord:
        return self.runs[self.best_p]

    def rows(self) -> list[dict]:
        out = []
        for p, rec in sorted(self.runs.items()):
            m = rec.metrics.per_set["test_out"]
            out.append({"p": p, "dice": m["dice"], "recall": m["recall"], "accuracy": m["accuracy"], "best": p == self.best_p})
        return out

    def table(self) -> str:
        lines = [f"{'p':>5}  {'Dice':>14}  {'Recall':>7}  {'Accuracy':>8}"]
        for r in self.rows():
            mark = " *" if r["best"] else ""
            lines.append(f"{r['p']:>5.2f}  {format_dice_with_p(r['dice'], r['p']):>14}  {r['recall']:>7.4f}  {r['accuracy']:>8.4f}{mark}")
        return "\n".join(lines)


def sweep_p(
    cfg: ExperimentConfig,
    values: Sequence[float] = SWEEP_VALUES,
    dataset: MultiCentreDataset | None = None,
    log_fn=None,
) -> SweepResult:
    if not cfg.masking.enabled:
        raise ValueError("sweep_p needs masking enabled")
    ds = dataset if dataset is not None else load_source(cfg)
    runs: dict[float, RunRecord] = {}
    root = Path(cfg.resolved().output_dir)
    for p in values:
        c = copy.deepcopy(cfg)
        c.masking.p = float(p)
        try:
            runs[float(p)] = run_experiment(c, ds, log_fn)
        except Exception as exc:
            _write_sweep(root, cfg, runs, None, error=f"p={p}: {exc!r}")
            raise SweepError(f"sweep member p={p} failed: {exc}") from exc
    best = select_best_p({p: r.dice("test_out") for p, r in runs.items()})
    result = SweepResult(best, runs)
    _write_sweep(root, cfg, runs, best)
    return result


def _write_sweep(root: Path, cfg: ExperimentConfig, runs: dict, best, error: str | None = None) -> Path:
    path = root / f"sweep_{cfg.model.kind}_c{cfg.held_out_centre}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(
            {
                "model": cfg.model.kind,
                "held_out_centre": cfg.held_out_centre,
                "best_p": best,
                "runs": {str(p): r.run_dir for p, r in runs.items()},
                "error": error,
            },
            indent=1,
        )
    )
    return path


@dataclass
class CentreRow:
    centre: int
    baseline: RunRecord | None = None
    augmented: RunRecord | None = None
    best_p: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        def cell(rec, p=None):
            if rec is None:
                return None
            m = rec.metrics.per_set["test_out"]
            return {"dice": m["dice"], "recall": m["recall"], "accuracy": m["accuracy"], "p": p, "split_hash": rec.split_hash, "run_dir": rec.run_dir}

        return {"centre": self.centre, "baseline": cell(self.baseline), "augmented": cell(self.augmented, self.best_p), "error": self.error}


def run_all_centres(
    cfg_template: ExperimentConfig,
    values: Sequence[float] | None = SWEEP_VALUES,
    dataset: MultiCentreDataset | None = None,
    log_fn=None,
) -> list[CentreRow]:
    """Baseline + augmented run for every held-out centre.

    ``values=None`` uses the template's single ``masking.p`` instead of a
    sweep. A failing centre is recorded and the loop moves on.
    """
    ds = dataset if dataset is not None else load_source(cfg_template)
    rows = []
    for centre in ds.centres:
        row = CentreRow(centre)
        try:
            base = copy.deepcopy(cfg_template)
            base.held_out_centre = centre
            base.masking.enabled = False
            row.baseline = run_experiment(base, ds, log_fn)
            aug = copy.deepcopy(cfg_template)
            aug.held_out_centre = centre
            aug.masking.enabled = True
            if values:
                sweep = sweep_p(aug, values, ds, log_fn)
                row.augmented, row.best_p = sweep.best, sweep.best_p
            else:
                row.augmented, row.best_p = run_experiment(aug, ds, log_fn), aug.masking.p
            if row.baseline.split_hash != row.augmented.split_hash:
                raise ProtocolError("baseline and augmented runs used different splits")
        except Exception as exc:  # noqa: BLE001 - reported per centre
            row.error = repr(exc)
            if log_fn:
                log_fn(f"centre {centre} failed: {exc!r}")
        rows.append(row)
    root = Path(cfg_template.resolved().output_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / f"all_centres_{cfg_template.model.kind}.json").write_text(
        json.dumps({"model": cfg_template.model.kind, "rows": [r.to_dict() for r in rows]}, indent=1)
    )
    return rows
