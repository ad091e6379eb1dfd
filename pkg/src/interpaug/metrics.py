"""Pixel-level segmentation metrics and their per-set aggregation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

METRICS = ("dice", "recall", "accuracy")


class Counts(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int


def binarize_prediction(prob, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def confusion_counts(pred_bin, gt) -> Counts:
    pred_bin, gt = np.asarray(pred_bin), np.asarray(gt)
    if pred_bin.shape != gt.shape:
        raise ValueError(f"prediction {pred_bin.shape} and ground truth {gt.shape} differ")
    p, g = pred_bin.astype(bool), gt.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return Counts(tp, fp, fn, p.size - tp - fp - fn)


# Empty prediction on empty ground truth scores 1 for dice and recall.

def dice_score(c: Counts) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def recall(c: Counts) -> float:
    denom = c.tp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def accuracy(c: Counts) -> float:
    return (c.tp + c.tn) / (c.tp + c.fp + c.fn + c.tn)


def sample_metrics(prob, gt, threshold: float = 0.5) -> dict[str, float]:
    c = confusion_counts(binarize_prediction(prob, threshold), gt)
    return {"dice": dice_score(c), "recall": recall(c), "accuracy": accuracy(c)}


def aggregate(per_sample: Iterable[Mapping[str, float]]) -> dict[str, float]:
    """Unweighted per-sample mean of every metric; ``n`` records the count."""
    rows = list(per_sample)
    if not rows:
        raise ValueError("cannot aggregate an empty evaluation set")
    out = {k: float(np.mean([r[k] for r in rows])) for k in METRICS}
    out["n"] = len(rows)
    return out


@dataclass
class MetricsReport:
    model: str
    held_out_centre: int
    p: float | None
    per_set: dict[str, dict[str, float]] = field(default_factory=dict)
    fingerprint: str = ""
    aggregation: str = "per-sample mean"

    def __post_init__(self):
        for name, vals in self.per_set.items():
            for k in METRICS:
                if not 0.0 <= vals[k] <= 1.0:
                    raise ValueError(f"{name}.{k}={vals[k]} outside [0, 1]")

    def rows(self) -> list[dict]:
        return [
            {
                "model": self.model,
                "held_out_centre": self.held_out_centre,
                "p": "" if self.p is None else self.p,
                "set": name,
                **{k: round(v[k], 6) for k in METRICS},
                "n": v.get("n", ""),
                "fingerprint": self.fingerprint,
            }
            for name, v in self.per_set.items()
        ]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "held_out_centre": self.held_out_centre,
            "p": self.p,
            "per_set": self.per_set,
            "fingerprint": self.fingerprint,
            "aggregation": self.aggregation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)
