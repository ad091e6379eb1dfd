"""Sobel edge filtering for the centre classifier input."""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.contiguous()
LUMA = (0.299, 0.587, 0.114)

# Largest sqrt(Gx^2 + Gy^2) a 3x3 patch with values in [0, 1] can produce;
# attained at a binary patch, e.g. [[0,0,1],[0,0,1],[0,1,1]] -> (4, 2).
MAX_MAGNITUDE = math.sqrt(20.0)

MODES = ("grayscale", "per-channel")


def sobel_gradients(x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Raw (Gx, Gy) responses of a ``B x C x H x W`` tensor, reflect-padded.

    Evaluated in separable form (central difference, then [1, 2, 1]
    smoothing across it), which equals cross-correlation with ``SOBEL_X`` /
    ``SOBEL_Y`` but is exactly zero on flat regions.
    """
    b, c, h, w = x.shape
    p = F.pad(x.reshape(b * c, 1, h, w), (1, 1, 1, 1), mode="reflect")[:, 0]
    dx = p[:, :, 2:] - p[:, :, :-2]
    dy = p[:, 2:, :] - p[:, :-2, :]
    gx = dx[:, :-2] + 2 * dx[:, 1:-1] + dx[:, 2:]
    gy = dy[:, :, :-2] + 2 * dy[:, :, 1:-1] + dy[:, :, 2:]
    return gx.reshape(b, c, h, w), gy.reshape(b, c, h, w)


def sobel_tensor(x: torch.Tensor, mode: str = "grayscale") -> torch.Tensor:
    """Batched Sobel magnitude of ``B x 3 x H x W`` images in [0, 1], rescaled to [0, 1].

    ``grayscale`` converts to luma first and replicates the single magnitude
    channel to three; ``per-channel`` filters each colour channel separately.
    """
    if mode not in MODES:
        raise ValueError(f"unknown sobel mode {mode!r}")
    if x.shape[-1] < 3 or x.shape[-2] < 3:
        raise ValueError(f"image {tuple(x.shape[-2:])} is smaller than the 3x3 kernel")
    if mode == "grayscale":
        luma = torch.tensor(LUMA, dtype=x.dtype, device=x.device).view(1, 3, 1, 1)
        x = (x * luma).sum(dim=1, keepdim=True)
    gx, gy = sobel_gradients(x)
    mag = torch.sqrt(gx * gx + gy * gy) / MAX_MAGNITUDE
    if mode == "grayscale":
        mag = mag.expand(-1, 3, -1, -1).contiguous()
    return mag


def sobel(image: np.ndarray, mode: str = "grayscale") -> np.ndarray:
    """Sobel magnitude of an ``H x W x 3`` (or ``H x W``) image; same spatial size."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.shape[0] < 3 or arr.shape[1] < 3:
        raise ValueError(f"image {arr.shape[:2]} is smaller than the 3x3 kernel")
    t = torch.from_numpy(arr).permute(2, 0, 1)[None]
    out = sobel_tensor(t, mode)[0].permute(1, 2, 0).numpy()
    return out.astype(image.dtype if np.issubdtype(np.asarray(image).dtype, np.floating) else np.float32)
