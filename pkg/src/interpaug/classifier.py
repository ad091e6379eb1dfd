"""Centre-of-origin classifier trained on Sobel-filtered images."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    AugmentConfig,
    MultiCentreDataset,
    NormConfig,
    SplitSpec,
    apply_augment,
    iter_batches,
    sample_augment_params,
    to_tensor,
)
from .filters import sobel_tensor
from .seeding import state_dict_hash, substream


class ClassifierError(ValueError):
    pass


@dataclass
class BackboneConfig:
    arch: str = "tiny"  # "tiny" | "resnet50"
    widths: tuple[int, ...] = (16, 32, 48, 64)
    strides: tuple[int, ...] = (1, 2, 2, 1)
    pretrained_weights: str | None = None


class ResidualBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Identity()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class TinyResNet(nn.Module):
    def __init__(self, widths: Sequence[int], strides: Sequence[int]):
        super().__init__()
        if len(widths) != len(strides) or not widths:
            raise ClassifierError("widths and strides must be non-empty and of equal length")
        self.stem = nn.Sequential(nn.Conv2d(3, widths[0], 3, 1, 1, bias=False), nn.BatchNorm2d(widths[0]), nn.ReLU())
        cin = widths[0]
        for i, (w, s) in enumerate(zip(widths, strides), start=1):
            setattr(self, f"layer{i}", ResidualBlock(cin, w, s))
            cin = w
        self.num_layers = len(widths)
        self.out_channels = cin

    def forward(self, x):
        x = self.stem(x)
        for i in range(1, self.num_layers + 1):
            x = getattr(self, f"layer{i}")(x)
        return x


class CentreClassifier(nn.Module):
    """Backbone + global average pool + linear head over the training centres.

    ``target_layer`` names the last convolutional stage whose activations
    feed the saliency computation.
    """

    def __init__(self, centres: Sequence[int], config: BackboneConfig | None = None):
        super().__init__()
        self.config = config or BackboneConfig()
        self.centres = [int(c) for c in centres]
        if self.config.arch == "tiny":
            self.backbone = TinyResNet(self.config.widths, self.config.strides)
            feat = self.backbone.out_channels
            self.target_layer = f"backbone.layer{self.backbone.num_layers}"
        elif self.config.arch == "resnet50":
            from torchvision.models import resnet50

            net = resnet50(weights=None)
            if self.config.pretrained_weights:
                state = torch.load(self.config.pretrained_weights, map_location="cpu")
                state = {k: v for k, v in state.items() if not k.startswith("fc.")}
                net.load_state_dict(state, strict=False)
            feat = net.fc.in_features
            net.fc = nn.Identity()
            net.avgpool = nn.Identity()
            self.backbone = nn.Sequential(
                net.conv1, net.bn1, net.relu, net.maxpool, net.layer1, net.layer2, net.layer3, net.layer4
            )
            self.target_layer = "backbone.7"
        else:
            raise ClassifierError(f"unknown backbone {self.config.arch!r}")
        self.fc = nn.Linear(feat, len(self.centres))

    def forward(self, x):
        a = self.backbone(x)
        return self.fc(a.mean(dim=(2, 3)))


def build_classifier(num_centres: int, config: BackboneConfig | None = None, centres: Sequence[int] | None = None):
    if num_centres < 2:
        raise ClassifierError(f"need at least 2 centres, got {num_centres}")
    centres = list(centres) if centres is not None else list(range(1, num_centres + 1))
    if len(centres) != num_centres:
        raise ClassifierError("centre list does not match num_centres")
    return CentreClassifier(centres, config)


# --------------------------------------------------------------------------
# checkpoints

@dataclass
class ClassifierCheckpoint:
    state_dict: dict
    centres: list[int]
    backbone: BackboneConfig
    input_size: tuple[int, int]
    metadata: dict = field(default_factory=dict)

    @property
    def split_hash(self) -> str | None:
        return self.metadata.get("split_hash")

    @property
    def weights_hash(self) -> str:
        return state_dict_hash(self.state_dict)

    def build(self) -> CentreClassifier:
        model = CentreClassifier(self.centres, self.backbone)
        model.load_state_dict(self.state_dict)
        model.input_size = tuple(self.input_size)
        model.sobel_mode = self.metadata.get("sobel_mode", "grayscale")
        model.norm = self.metadata.get("norm", "unit")
        model.eval()
        return model

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.state_dict, path.with_suffix(".pt"))
        meta = {
            "centres": self.centres,
            "backbone": asdict(self.backbone),
            "input_size": list(self.input_size),
            "weights_hash": self.weights_hash,
            **self.metadata,
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1))
        return path.with_suffix(".pt")

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierCheckpoint":
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        state = torch.load(path.with_suffix(".pt"), map_location="cpu")
        backbone = meta.pop("backbone")
        backbone["widths"] = tuple(backbone["widths"])
        backbone["strides"] = tuple(backbone["strides"])
        ckpt = cls(
            state_dict=state,
            centres=meta.pop("centres"),
            backbone=BackboneConfig(**backbone),
            input_size=tuple(meta.pop("input_size")),
            metadata=meta,
        )
        stored = meta.pop("weights_hash", None)
        if stored is not None and stored != ckpt.weights_hash:
            raise ClassifierError(f"{path}: weights hash mismatch (corrupt checkpoint?)")
        return ckpt


# --------------------------------------------------------------------------
# training and inference

@dataclass
class ClassifierTrainConfig:
    epochs: int = 10
    lr: float = 1e-5
    batch_size: int = 4
    seed: int = 0
    augment: bool = True
    sobel_mode: str = "grayscale"
    norm: str = "unit"


def edge_batch(
    ds: MultiCentreDataset,
    ids: Sequence[str],
    sobel_mode: str = "grayscale",
    norm: NormConfig | None = None,
    params: Sequence | None = None,
) -> torch.Tensor:
    images = []
    for i, sid in enumerate(ids):
        s = ds[sid]
        if params is not None:
            s, _ = apply_augment(s, None, params[i])
        images.append(s.image)
    edges = sobel_tensor(to_tensor(images), sobel_mode)
    if norm is not None and norm.mode == "imagenet":
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        edges = (edges - mean) / std
    return edges


def train_classifier(
    model: CentreClassifier,
    ds: MultiCentreDataset,
    split: SplitSpec,
    cfg: ClassifierTrainConfig | None = None,
    log=None,
) -> ClassifierCheckpoint:
    """Cross-entropy training on Sobel-filtered images of ``split.train``."""
    cfg = cfg or ClassifierTrainConfig()
    ids = list(split.train)
    if not ids:
        raise ClassifierError("empty training split")
    train_centres = sorted({ds[s].centre for s in ids})
    if len(train_centres) < 2:
        raise ClassifierError(f"training split covers a single centre {train_centres}")
    if sorted(model.centres) != train_centres:
        raise ClassifierError(f"model centres {model.centres} differ from training centres {train_centres}")
    label = {c: i for i, c in enumerate(model.centres)}
    norm = NormConfig(cfg.norm)
    aug_cfg = AugmentConfig()
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history = []

    for epoch in range(cfg.epochs):
        model.train()
        order = substream(cfg.seed, "classifier-order", epoch).permutation(len(ids))
        total, n = 0.0, 0
        for batch in iter_batches([ids[i] for i in order], cfg.batch_size):
            params = None
            if cfg.augment:
                params = [sample_augment_params(substream(cfg.seed, "classifier-aug", sid, epoch), aug_cfg) for sid in batch]
            x = edge_batch(ds, batch, cfg.sobel_mode, norm, params)
            y = torch.tensor([label[ds[sid].centre] for sid in batch])
            loss = F.cross_entropy(model(x), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            n += len(batch)
        history.append(total / n)
        if log:
            log(f"classifier epoch {epoch + 1}/{cfg.epochs} ce={history[-1]:.4f}")

    model.eval()
    size = ds[ids[0]].image.shape[:2]
    model.input_size = tuple(size)
    model.sobel_mode = cfg.sobel_mode
    model.norm = cfg.norm
    return ClassifierCheckpoint(
        state_dict={k: v.detach().clone() for k, v in model.state_dict().items()},
        centres=list(model.centres),
        backbone=model.config,
        input_size=tuple(size),
        metadata={
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "lr": cfg.lr,
            "batch_size": cfg.batch_size,
            "augment": cfg.augment,
            "sobel_mode": cfg.sobel_mode,
            "norm": cfg.norm,
            "split_hash": split.hash(),
            "held_out_centre": split.held_out_centre,
            "loss_history": history,
        },
    )


def predict_centre(model: CentreClassifier, edge_image) -> tuple[np.ndarray, int]:
    """Logits for one edge image (``H x W x 3`` array or ``3 x H x W`` tensor) and the argmax centre.

    ``np.argmax`` returns the first maximum, so ties go to the lowest class
    index, which is the lowest centre id since centres are kept sorted.
    """
    x = edge_image
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).permute(2, 0, 1)
    if x.ndim == 3:
        x = x[None]
    expected = getattr(model, "input_size", None)
    if expected is not None and tuple(x.shape[-2:]) != tuple(expected):
        raise ClassifierError(f"edge image size {tuple(x.shape[-2:])} != model input size {tuple(expected)}")
    model.eval()
    with torch.no_grad():
        logits = model(x.to(next(model.parameters()).dtype))[0].numpy()
    return logits, centre_from_logits(logits, model.centres)


def centre_from_logits(logits: Sequence[float], centres: Sequence[int]) -> int:
    order = np.argsort(np.asarray(centres), kind="stable")
    ranked = np.asarray(logits)[order]
    return int(np.asarray(centres)[order][int(np.argmax(ranked))])


def evaluate_classifier(model: CentreClassifier, ds: MultiCentreDataset, ids: Sequence[str], batch_size: int = 64) -> float:
    """Top-1 accuracy on ``ids`` using the model's own Sobel mode and normalization."""
    model.eval()
    sobel_mode = getattr(model, "sobel_mode", "grayscale")
    norm = NormConfig(getattr(model, "norm", "unit"))
    label = {c: i for i, c in enumerate(model.centres)}
    correct = 0
    with torch.no_grad():
        for batch in iter_batches(list(ids), batch_size):
            pred = model(edge_batch(ds, batch, sobel_mode, norm)).argmax(dim=1)
            correct += sum(int(p) == label[ds[s].centre] for p, s in zip(pred, batch))
    return correct / len(ids)
