"""GradCAM saliency of the frozen centre classifier, binarization into
keep-masks, and a compact on-disk cache of the results."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import MultiCentreDataset, NormConfig, iter_batches
from .classifier import edge_batch


class SaliencyError(RuntimeError):
    pass


@dataclass
class SaliencyRecord:
    cam: np.ndarray  # float32 H x W in [0, 1]
    keep_mask: np.ndarray  # uint8 H x W, 1 = keep, 0 = block
    threshold: float
    target_class: int
    sample_id: str


@dataclass
class GradCamResult:
    """Every intermediate of one batched GradCAM pass (``B`` leading dim)."""

    logits: torch.Tensor
    targets: list[int]  # centre ids
    activations: torch.Tensor  # B x K x h x w
    gradients: torch.Tensor  # B x K x h x w
    importance: torch.Tensor  # B x K
    weighted: torch.Tensor  # B x h x w, before ReLU
    rectified: torch.Tensor  # B x h x w
    normalized: torch.Tensor  # B x h x w
    cam: torch.Tensor  # B x H x W


def normalize_cam(raw):
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    if isinstance(raw, torch.Tensor):
        lo, hi = raw.min(), raw.max()
        if hi <= lo:
            return torch.zeros_like(raw)
        return (raw - lo) / (hi - lo)
    raw = np.asarray(raw, dtype=np.float64)
    lo, hi = raw.min(), raw.max()
    if hi <= lo:
        return np.zeros_like(raw)
    return (raw - lo) / (hi - lo)


def _normalize_batch(maps: torch.Tensor) -> torch.Tensor:
    flat = maps.flatten(1)
    lo = flat.min(dim=1).values[:, None, None]
    hi = flat.max(dim=1).values[:, None, None]
    span = hi - lo
    out = (maps - lo) / torch.where(span > 0, span, torch.ones_like(span))
    return torch.where(span > 0, out, torch.zeros_like(out))


def upsample_cam(cam, size: tuple[int, int]):
    """Bilinear upsampling (half-pixel centres) of an ``h x w`` or ``B x h x w`` map."""
    h, w = size
    if h <= 0 or w <= 0:
        raise SaliencyError(f"target size must be positive, got {size}")
    is_np = not isinstance(cam, torch.Tensor)
    t = torch.as_tensor(np.asarray(cam) if is_np else cam)
    if t.numel() == 0:
        raise SaliencyError("empty cam")
    squeeze = t.ndim == 2
    t4 = t[None, None] if squeeze else t[:, None]
    if tuple(t4.shape[-2:]) == (h, w):
        out = t4.clone()
    else:
        out = F.interpolate(t4, size=(h, w), mode="bilinear", align_corners=False)
    out = out.clamp(0.0, 1.0)
    out = out[0, 0] if squeeze else out[:, 0]
    return out.numpy() if is_np else out


def binarize(cam, th: float = 0.5):
    """Keep-mask: 1 where ``cam < th`` (low saliency), 0 where ``cam >= th``."""
    if not 0.0 < th < 1.0:
        raise SaliencyError(f"threshold must lie in (0, 1), got {th}")
    if isinstance(cam, torch.Tensor):
        return (cam < th).to(torch.uint8)
    return (np.asarray(cam) < th).astype(np.uint8)


def _resolve_targets(target, logits: torch.Tensor, centres: Sequence[int]) -> list[int]:
    b = logits.shape[0]
    if target is None or target == "predicted":
        # argmax returns the first maximum -> lowest centre id on ties
        return [centres[int(i)] for i in logits.argmax(dim=1)]
    if isinstance(target, (int, np.integer)):
        target = [int(target)] * b
    target = [int(t) for t in target]
    if len(target) != b:
        raise SaliencyError(f"{len(target)} targets for a batch of {b}")
    for t in target:
        if t not in centres:
            raise SaliencyError(f"target centre {t} not among classifier centres {list(centres)}")
    return target


def gradcam(
    model: nn.Module,
    edge_images,
    target="predicted",
    layer: str | None = None,
) -> GradCamResult:
    """Batched GradCAM on Sobel-filtered inputs.

    ``target`` is ``"predicted"``, a centre id, or one centre id per image.
    Gradients are taken w.r.t. a detached copy of the layer activations, so
    the model's own parameters never accumulate gradient.
    """
    x = edge_images
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32)).permute(2, 0, 1)
    if x.ndim == 3:
        x = x[None]
    name = layer or getattr(model, "target_layer", None)
    if name is None:
        raise SaliencyError("no target layer given and model has no 'target_layer'")
    try:
        module = model.get_submodule(name)
    except AttributeError as exc:
        raise SaliencyError(f"layer {name!r} not found in model") from exc

    captured = {}

    def hook(_mod, _inp, out):
        leaf = out.detach().requires_grad_(True)
        captured["a"] = leaf
        return leaf

    was_training = model.training
    model.eval()
    handle = module.register_forward_hook(hook)
    try:
        with torch.enable_grad():
            logits = model(x.to(next(model.parameters()).dtype))
            if "a" not in captured:
                raise SaliencyError(f"layer {name!r} was not executed in the forward pass")
            acts = captured["a"]
            centres = list(getattr(model, "centres", range(logits.shape[1])))
            targets = _resolve_targets(target, logits.detach(), centres)
            idx = torch.tensor([centres.index(t) for t in targets])
            score = logits.gather(1, idx[:, None]).sum()
            (grads,) = torch.autograd.grad(score, acts)
    finally:
        handle.remove()
        model.train(was_training)

    if not torch.isfinite(grads).all():
        raise SaliencyError("non-finite gradients in GradCAM")
    acts = acts.detach()
    importance = grads.mean(dim=(2, 3))
    weighted = (importance[:, :, None, None] * acts).sum(dim=1)
    rectified = F.relu(weighted)
    normalized = _normalize_batch(rectified)
    cam = upsample_cam(normalized, tuple(x.shape[-2:]))
    return GradCamResult(
        logits=logits.detach(),
        targets=targets,
        activations=acts,
        gradients=grads,
        importance=importance,
        weighted=weighted,
        rectified=rectified,
        normalized=normalized,
        cam=cam,
    )


def compute_saliency(
    model: nn.Module,
    ds: MultiCentreDataset,
    ids: Sequence[str],
    threshold: float = 0.5,
    target: str = "predicted",
    batch_size: int = 32,
) -> dict[str, SaliencyRecord]:
    """GradCAM + binarization for every sample in ``ids`` (``target``: predicted | true)."""
    sobel_mode = getattr(model, "sobel_mode", "grayscale")
    norm = NormConfig(getattr(model, "norm", "unit"))
    out = {}
    for batch in iter_batches(list(ids), batch_size):
        x = edge_batch(ds, batch, sobel_mode, norm)
        tgt = [ds[s].centre for s in batch] if target == "true" else "predicted"
        res = gradcam(model, x, tgt)
        for sid, cam, t in zip(batch, res.cam, res.targets):
            cam_np = cam.numpy().astype(np.float32)
            out[sid] = SaliencyRecord(cam_np, binarize(cam_np, threshold), threshold, t, sid)
    return out


# --------------------------------------------------------------------------
# cache

_MAGIC = b"IGCM"
_VERSION = 1
_HEADER = struct.Struct("<4sH32sdI")
_DIMS = struct.Struct("<HHi")
CAM_SCALE = 65535


def quantize_cam(cam: np.ndarray) -> np.ndarray:
    return np.round(np.clip(cam, 0, 1) * CAM_SCALE).astype("<u2")


def dequantize_cam(q: np.ndarray) -> np.ndarray:
    return (q.astype(np.float32) / CAM_SCALE).astype(np.float32)


class CamCache:
    """Saliency records keyed by (sample id, classifier hash, threshold).

    One file holds records for a single (classifier hash, threshold) pair;
    opening it with a different pair starts empty and every lookup misses.
    CAMs are stored as 16-bit fixed point, keep-masks bit-packed.
    """

    def __init__(self, path: str | Path, classifier_hash: str, threshold: float):
        self.path = Path(path)
        self.classifier_hash = classifier_hash
        self.threshold = float(threshold)
        self._records: dict[str, tuple[np.ndarray, np.ndarray, int]] = {}
        if self.path.exists():
            self._read()

    def __len__(self):
        return len(self._records)

    def __contains__(self, sample_id: str):
        return sample_id in self._records

    def _read(self):
        blob = self.path.read_bytes()
        magic, version, hbytes, th, count = _HEADER.unpack_from(blob, 0)
        if magic != _MAGIC or version != _VERSION:
            raise SaliencyError(f"{self.path}: not a CAM cache (version {version})")
        if hbytes.hex() != self.classifier_hash or th != self.threshold:
            return
        off = _HEADER.size
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, off)
            off += 2
            sid = blob[off : off + n].decode()
            off += n
            h, w, tgt = _DIMS.unpack_from(blob, off)
            off += _DIMS.size
            q = np.frombuffer(blob, dtype="<u2", count=h * w, offset=off).reshape(h, w).copy()
            off += 2 * h * w
            nbytes = (h * w + 7) // 8
            bits = np.frombuffer(blob, dtype=np.uint8, count=nbytes, offset=off)
            off += nbytes
            keep = np.unpackbits(bits, count=h * w).reshape(h, w)
            self._records[sid] = (q, keep, tgt)

    def put(self, sample_id: str, record: SaliencyRecord) -> None:
        if record.threshold != self.threshold:
            raise SaliencyError(f"record threshold {record.threshold} != cache threshold {self.threshold}")
        keep = np.asarray(record.keep_mask, dtype=np.uint8)
        self._records[sample_id] = (quantize_cam(record.cam), keep.copy(), int(record.target_class))

    def get(self, sample_id: str, classifier_hash: str | None = None, threshold: float | None = None):
        """The stored record, or ``None`` on a miss (unknown id or stale key)."""
        if classifier_hash is not None and classifier_hash != self.classifier_hash:
            return None
        if threshold is not None and float(threshold) != self.threshold:
            return None
        hit = self._records.get(sample_id)
        if hit is None:
            return None
        q, keep, tgt = hit
        return SaliencyRecord(dequantize_cam(q), keep.copy(), self.threshold, tgt, sample_id)

    def save(self) -> Path:
        chunks = [_HEADER.pack(_MAGIC, _VERSION, bytes.fromhex(self.classifier_hash), self.threshold, len(self._records))]
        for sid, (q, keep, tgt) in self._records.items():
            raw = sid.encode()
            h, w = q.shape
            chunks += [
                struct.pack("<H", len(raw)),
                raw,
                _DIMS.pack(h, w, tgt),
                q.astype("<u2").tobytes(),
                np.packbits(keep.ravel()).tobytes(),
            ]
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        tmp.write_bytes(b"".join(chunks))
        os.replace(tmp, self.path)
        return self.path


def cache_put(store: CamCache, sample_id: str, record: SaliencyRecord) -> None:
    store.put(sample_id, record)


def cache_get(store: CamCache, sample_id: str, classifier_hash: str | None = None, threshold: float | None = None):
    return store.get(sample_id, classifier_hash, threshold)


def keep_masks_for(
    model: nn.Module,
    classifier_hash: str,
    ds: MultiCentreDataset,
    ids: Sequence[str],
    threshold: float = 0.5,
    target: str = "predicted",
    cache: CamCache | None = None,
) -> dict[str, np.ndarray]:
    """Keep-masks for ``ids``, served from ``cache`` where possible."""
    out, missing = {}, []
    for sid in ids:
        rec = cache.get(sid, classifier_hash, threshold) if cache is not None else None
        if rec is None:
            missing.append(sid)
        else:
            out[sid] = rec.keep_mask
    if missing:
        fresh = compute_saliency(model, ds, missing, threshold, target)
        for sid, rec in fresh.items():
            out[sid] = rec.keep_mask
            if cache is not None:
                cache.put(sid, rec)
        if cache is not None:
            cache.save()
    return out
