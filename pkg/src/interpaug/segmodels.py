"""Segmentation models (UNet, DeepLabV3+-style, SDNet) and their losses.

Every model maps a ``B x 3 x H x W`` batch to ``B x 1 x H x W`` foreground
probabilities through ``forward``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .classifier import ResidualBlock

KINDS = ("unet", "deeplab", "sdnet")


class ModelConfigError(ValueError):
    pass


@dataclass
class SegModelConfig:
    kind: str = "unet"
    depth: int = 3
    width: int = 16
    # deeplab
    backbone: str = "tiny"  # "tiny" | "resnet101"
    aspp_rates: tuple[int, ...] = (1, 6, 12, 18)
    image_pooling: bool = True
    # sdnet
    n_anatomy: int = 8
    z_dim: int = 8
    loss_weights: dict = field(default_factory=lambda: {"dice": 10.0, "reconstruction": 1.0, "kl": 0.01, "modality": 1.0})


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    """Encoder-decoder with skip connections; ``depth`` counts the 2x downsamplings."""

    def __init__(self, in_channels: int = 3, out_channels: int = 1, depth: int = 3, width: int = 16, sigmoid: bool = True):
        super().__init__()
        if depth < 1:
            raise ModelConfigError(f"UNet depth must be >= 1, got {depth}")
        self.depth = depth
        self.sigmoid = sigmoid
        chans = [width * 2**i for i in range(depth + 1)]
        self.down = nn.ModuleList([_double_conv(in_channels, chans[0])])
        self.down.extend(_double_conv(chans[i - 1], chans[i]) for i in range(1, depth + 1))
        self.up = nn.ModuleList(nn.ConvTranspose2d(chans[i], chans[i - 1], 2, stride=2) for i in range(depth, 0, -1))
        self.dec = nn.ModuleList(_double_conv(chans[i], chans[i - 1]) for i in range(depth, 0, -1))
        self.head = nn.Conv2d(chans[0], out_channels, 1)

    def logits(self, x):
        if x.shape[-1] % 2**self.depth or x.shape[-2] % 2**self.depth:
            raise ModelConfigError(f"input {tuple(x.shape[-2:])} not divisible by 2**{self.depth}")
        skips = []
        for i, block in enumerate(self.down):
            x = block(x if i == 0 else F.max_pool2d(x, 2))
            skips.append(x)
        skips.pop()
        for up, dec in zip(self.up, self.dec):
            x = dec(torch.cat([skips.pop(), up(x)], dim=1))
        return self.head(x)

    def forward(self, x):
        out = self.logits(x)
        return torch.sigmoid(out) if self.sigmoid else out


def unet_parameter_count(in_channels: int, out_channels: int, depth: int, width: int) -> int:
    """Closed-form parameter count of :class:`UNet`."""
    chans = [width * 2**i for i in range(depth + 1)]

    def dconv(cin, cout):
        return 9 * cin * cout + 9 * cout * cout + 4 * cout  # two bias-free convs + two BN affines

    total = dconv(in_channels, chans[0]) + sum(dconv(chans[i - 1], chans[i]) for i in range(1, depth + 1))
    for i in range(depth, 0, -1):
        total += 4 * chans[i] * chans[i - 1] + chans[i - 1]  # 2x2 transposed conv
        total += dconv(chans[i], chans[i - 1])
    return total + chans[0] * out_channels + out_channels


# --------------------------------------------------------------------------
# DeepLabV3+

class ASPP(nn.Module):
    def __init__(self, cin: int, cout: int, rates: Sequence[int], image_pooling: bool = True):
        super().__init__()
        if not rates or any(int(r) != r or r < 1 for r in rates):
            raise ModelConfigError(f"ASPP rates must be positive integers, got {rates}")
        self.branches = nn.ModuleList(
            nn.Sequential(nn.Conv2d(cin, cout, 3, padding=r, dilation=r, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))
            for r in rates
        )
        self.pool = nn.Sequential(nn.Conv2d(cin, cout, 1), nn.ReLU(inplace=True)) if image_pooling else None
        n = len(rates) + (1 if image_pooling else 0)
        self.project = nn.Sequential(nn.Conv2d(n * cout, cout, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True))

    def forward(self, x):
        outs = [b(x) for b in self.branches]
        if self.pool is not None:
            g = self.pool(x.mean(dim=(2, 3), keepdim=True))
            outs.append(g.expand(-1, -1, *x.shape[-2:]))
        return self.project(torch.cat(outs, dim=1))


class _TinyDeepLabBackbone(nn.Module):
    """Output stride 8, low-level features at stride 4."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, width, 3, 2, 1, bias=False), nn.BatchNorm2d(width), nn.ReLU(inplace=True))
        self.low = ResidualBlock(width, width * 2, 2)
        self.high = nn.Sequential(ResidualBlock(width * 2, width * 4, 2), ResidualBlock(width * 4, width * 4, 1))
        self.low_channels = width * 2
        self.high_channels = width * 4

    def forward(self, x):
        low = self.low(self.stem(x))
        return low, self.high(low)


class _ResNet101Backbone(nn.Module):
    def __init__(self):
        super().__init__()
        from torchvision.models import resnet101

        net = resnet101(weights=None, replace_stride_with_dilation=[False, True, True])
        self.stem = nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool)
        self.layer1, self.layer2, self.layer3, self.layer4 = net.layer1, net.layer2, net.layer3, net.layer4
        self.low_channels, self.high_channels = 256, 2048

    def forward(self, x):
        low = self.layer1(self.stem(x))
        return low, self.layer4(self.layer3(self.layer2(low)))


class DeepLabV3Plus(nn.Module):
    def __init__(self, cfg: SegModelConfig | None = None):
        super().__init__()
        cfg = cfg or SegModelConfig(kind="deeplab")
        if cfg.backbone == "tiny":
            self.backbone = _TinyDeepLabBackbone(cfg.width)
        elif cfg.backbone == "resnet101":
            self.backbone = _ResNet101Backbone()
        else:
            raise ModelConfigError(f"unknown deeplab backbone {cfg.backbone!r}")
        aspp_ch = 4 * cfg.width
        self.aspp = ASPP(self.backbone.high_channels, aspp_ch, cfg.aspp_rates, cfg.image_pooling)
        low_ch = max(8, cfg.width)
        self.low_proj = nn.Sequential(nn.Conv2d(self.backbone.low_channels, low_ch, 1, bias=False), nn.BatchNorm2d(low_ch), nn.ReLU(inplace=True))
        self.fuse = nn.Sequential(
            nn.Conv2d(aspp_ch + low_ch, aspp_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(aspp_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(aspp_ch, aspp_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(aspp_ch),
            nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(aspp_ch, 1, 1)

    def forward(self, x):
        size = x.shape[-2:]
        low, high = self.backbone(x)
        high = self.aspp(high)
        high = F.interpolate(high, size=low.shape[-2:], mode="bilinear", align_corners=False)
        out = self.fuse(torch.cat([high, self.low_proj(low)], dim=1))
        out = F.interpolate(self.head(out), size=size, mode="bilinear", align_corners=False)
        return torch.sigmoid(out)


# --------------------------------------------------------------------------
# SDNet

class ModalityEncoder(nn.Module):
    """E_s: (anatomy factor, image) -> Gaussian posterior over the style vector."""

    def __init__(self, cin: int, z_dim: int, width: int = 16):
        super().__init__()
        self.conv = nn.Sequential(
            nn.Conv2d(cin, width, 3, 2, 1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(width, 2 * width, 3, 2, 1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * width, 2 * width, 3, 2, 1), nn.LeakyReLU(0.2, inplace=True),
        )
        self.mu = nn.Linear(2 * width, z_dim)
        self.logvar = nn.Linear(2 * width, z_dim)

    def forward(self, z, x):
        h = self.conv(torch.cat([z, x], dim=1)).mean(dim=(2, 3))
        return self.mu(h), self.logvar(h)


class FiLMDecoder(nn.Module):
    """D: anatomy factor modulated by the style vector -> image reconstruction."""

    def __init__(self, n_anatomy: int, z_dim: int, width: int = 16, out_channels: int = 3):
        super().__init__()
        self.convs = nn.ModuleList([nn.Conv2d(n_anatomy, width, 3, padding=1), nn.Conv2d(width, width, 3, padding=1)])
        self.film = nn.ModuleList([nn.Linear(z_dim, 2 * width) for _ in self.convs])
        self.out = nn.Conv2d(width, out_channels, 3, padding=1)

    def forward(self, z, s):
        h = z
        for conv, film in zip(self.convs, self.film):
            gamma, beta = film(s).chunk(2, dim=1)
            h = F.leaky_relu(conv(h) * (1 + gamma[..., None, None]) + beta[..., None, None], 0.2)
        return self.out(h)


class Segmentor(nn.Module):
    """S: anatomy factor -> foreground probability (three 3x3 convs + 1x1 head)."""

    def __init__(self, n_anatomy: int, width: int = 16):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(n_anatomy, width, 3, padding=1, bias=False), nn.BatchNorm2d(width), nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1, bias=False), nn.BatchNorm2d(width), nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, padding=1, bias=False), nn.BatchNorm2d(width), nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(width, 1, 1)

    def forward(self, z):
        return torch.sigmoid(self.head(self.body(z)))


class SDNetOutputs(NamedTuple):
    z: torch.Tensor  # anatomy factor, B x N x H x W
    z_seg: torch.Tensor  # what the segmentor saw (masked or not)
    mu: torch.Tensor
    logvar: torch.Tensor
    s: torch.Tensor
    reconstruction: torch.Tensor
    s_reconstructed: torch.Tensor
    pred: torch.Tensor


class SDNet(nn.Module):
    """Anatomy/modality disentanglement with a segmentor fed only by the anatomy factor."""

    def __init__(self, cfg: SegModelConfig | None = None):
        super().__init__()
        cfg = cfg or SegModelConfig(kind="sdnet")
        if cfg.n_anatomy < 2:
            raise ModelConfigError(f"SDNet needs at least 2 anatomy channels, got {cfg.n_anatomy}")
        self.n_anatomy = cfg.n_anatomy
        self.anatomy = UNet(3, cfg.n_anatomy, cfg.depth, cfg.width, sigmoid=False)
        self.modality = ModalityEncoder(cfg.n_anatomy + 3, cfg.z_dim, cfg.width)
        self.decoder = FiLMDecoder(cfg.n_anatomy, cfg.z_dim, cfg.width)
        self.segmentor = Segmentor(cfg.n_anatomy, cfg.width)

    def encode_anatomy(self, x):
        return torch.softmax(self.anatomy(x), dim=1)

    def forward(self, x):
        return self.segmentor(self.encode_anatomy(x))

    def forward_all(self, x, keep_mask: torch.Tensor | None = None, sample: bool | None = None) -> SDNetOutputs:
        """Full pass; ``keep_mask`` (``B x 1 x H x W``) multiplies the segmentor's copy of z only."""
        sample = self.training if sample is None else sample
        z = self.encode_anatomy(x)
        mu, logvar = self.modality(z, x)
        s = mu + torch.randn_like(mu) * torch.exp(0.5 * logvar) if sample else mu
        recon = self.decoder(z, s)
        s_rec, _ = self.modality(z, recon)
        z_seg = z if keep_mask is None else z * keep_mask
        return SDNetOutputs(z, z_seg, mu, logvar, s, recon, s_rec, self.segmentor(z_seg))


# --------------------------------------------------------------------------
# losses

def dice_loss(pred: torch.Tensor, gt: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Soft Dice loss ``1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps)`` over all elements."""
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")
    gt = gt.to(pred.dtype)
    inter = (pred * gt).sum()
    return 1.0 - (2.0 * inter + eps) / (pred.sum() + gt.sum() + eps)


def kl_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over dims, averaged over the batch."""
    return (-0.5 * (1 + logvar - mu.pow(2) - logvar.exp()).sum(dim=1)).mean()


DEFAULT_SDNET_WEIGHTS = {"dice": 10.0, "reconstruction": 1.0, "kl": 0.01, "modality": 1.0}


def sdnet_losses(out: SDNetOutputs, x: torch.Tensor, y: torch.Tensor, weights: dict | None = None) -> dict[str, torch.Tensor]:
    w = {**DEFAULT_SDNET_WEIGHTS, **(weights or {})}
    parts = {
        "dice": dice_loss(out.pred, y),
        "reconstruction": (out.reconstruction - x).abs().mean(),
        "kl": kl_standard_normal(out.mu, out.logvar),
        "modality": (out.s_reconstructed - out.s).abs().mean(),
    }
    parts["total"] = sum(w[k] * v for k, v in parts.items())
    return parts


def build_unet(cfg: SegModelConfig | None = None) -> UNet:
    cfg = cfg or SegModelConfig()
    return UNet(3, 1, cfg.depth, cfg.width)


def build_deeplab(cfg: SegModelConfig | None = None) -> DeepLabV3Plus:
    return DeepLabV3Plus(cfg or SegModelConfig(kind="deeplab"))


def build_sdnet(cfg: SegModelConfig | None = None) -> SDNet:
    return SDNet(cfg or SegModelConfig(kind="sdnet"))


def build_segmodel(cfg: SegModelConfig) -> nn.Module:
    builders = {"unet": build_unet, "deeplab": build_deeplab, "sdnet": build_sdnet}
    if cfg.kind not in builders:
        raise ModelConfigError(f"unknown model kind {cfg.kind!r}; expected one of {KINDS}")
    return builders[cfg.kind](cfg)
