"""Saliency-guided masking: with probability ``p`` a training input (or the
SDNet anatomy factor) is multiplied by the binary keep-mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .seeding import uniform01

MODES = ("input", "anatomy")


class MaskingError(ValueError):
    pass


@dataclass(frozen=True)
class MaskingPolicy:
    p: float = 0.5
    mode: str = "input"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise MaskingError(f"masking probability must lie in [0, 1], got {self.p}")
        if self.mode not in MODES:
            raise MaskingError(f"unknown masking mode {self.mode!r}")


def draw_mask_decision(policy: MaskingPolicy, sample_id: str, epoch: int) -> bool:
    """Bernoulli(p) draw that depends only on (seed, sample id, epoch)."""
    if policy.p <= 0.0:
        return False
    if policy.p >= 1.0:
        return True
    return uniform01(policy.seed, "masking", sample_id, epoch) < policy.p


def _check(spatial, keep_mask) -> None:
    if tuple(keep_mask.shape) != tuple(spatial):
        raise MaskingError(f"keep-mask {tuple(keep_mask.shape)} does not match spatial dims {tuple(spatial)}")


def _like(keep_mask, x):
    if isinstance(x, torch.Tensor):
        return torch.as_tensor(np.asarray(keep_mask)).to(dtype=x.dtype, device=x.device)
    return np.asarray(keep_mask).astype(x.dtype)


def mask_input(image, keep_mask, policy: MaskingPolicy, triggered: bool):
    """Zero blocked pixels in every channel when ``triggered``.

    ``image`` is ``H x W x 3`` (numpy) or ``3 x H x W`` (tensor).
    """
    if policy.mode != "input":
        raise MaskingError("mask_input needs an input-level policy")
    hwc = isinstance(image, np.ndarray) and image.ndim == 3 and image.shape[2] == 3
    _check(image.shape[:2] if hwc else image.shape[-2:], keep_mask)
    if not triggered:
        return image
    m = _like(keep_mask, image)
    return image * (m[..., None] if hwc else m)


def mask_anatomy(z, keep_mask, policy: MaskingPolicy, triggered: bool):
    """Zero the same spatial locations in all ``N`` channels of ``z`` (``N x H x W``)."""
    if policy.mode != "anatomy":
        raise MaskingError("mask_anatomy needs an anatomy-level policy")
    if z.ndim != 3:
        raise MaskingError(f"anatomy factor must be N x H x W, got {tuple(z.shape)}")
    _check(z.shape[1:], keep_mask)
    if not triggered:
        return z
    return z * _like(keep_mask, z)


def batch_keep_masks(
    keep_masks: list[np.ndarray | None], triggered: list[bool], size: tuple[int, int]
) -> torch.Tensor:
    """``B x 1 x H x W`` multiplier: the keep-mask where triggered, ones elsewhere."""
    out = torch.ones(len(keep_masks), 1, *size)
    for i, (m, t) in enumerate(zip(keep_masks, triggered)):
        if t and m is not None:
            out[i, 0] = torch.from_numpy(np.asarray(m, dtype=np.float32))
    return out
