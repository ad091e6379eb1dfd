"""Multi-centre datasets: loading, synthetic generation, patient-level splits,
preprocessing and the standard (geometric + colour) augmentations.

Images are stored as float32 ``H x W x 3`` arrays in ``[0, 1]``; masks and
keep-masks as uint8 ``H x W`` arrays in ``{0, 1}``.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from PIL import Image

from .seeding import sha256_json, substream

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
IMAGE_EXTS = (".jpg", ".jpeg", ".png", ".bmp", ".tif", ".tiff")


class DataError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    centre: int
    patient_id: str
    sample_id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DataError(f"{self.sample_id}: image must be HxWx3, got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise DataError(
                f"{self.sample_id}: mask {self.mask.shape} does not match image {self.image.shape[:2]}"
            )


@dataclass
class MultiCentreDataset:
    samples: list[Sample]
    centres: list[int]
    overlay_truth: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("sample ids are not unique")
        known = set(self.centres)
        for s in self.samples:
            if s.centre not in known:
                raise DataError(f"{s.sample_id}: centre {s.centre} not in {self.centres}")
        self._index = {s.sample_id: i for i, s in enumerate(self.samples)}

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, sample_id: str) -> Sample:
        return self.samples[self._index[sample_id]]

    def ids(self, centre: int | None = None) -> list[str]:
        return [s.sample_id for s in self.samples if centre is None or s.centre == centre]

    def counts(self) -> dict[int, int]:
        out = {c: 0 for c in self.centres}
        for s in self.samples:
            out[s.centre] += 1
        return out

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for s in self.samples:
            h.update(s.sample_id.encode())
            h.update(s.patient_id.encode())
            h.update(str(s.centre).encode())
            h.update(np.ascontiguousarray(s.image).tobytes())
            h.update(np.ascontiguousarray(s.mask).tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# preprocessing

@dataclass
class NormConfig:
    """``unit`` keeps [0, 1] scaling; ``imagenet`` standardizes per channel."""

    mode: str = "unit"

    def __post_init__(self):
        if self.mode not in ("unit", "imagenet"):
            raise DataError(f"unknown normalization mode {self.mode!r}")


def _as_float01(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return image.astype(np.float32, copy=False)


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize (half-pixel centres, no antialiasing) of an HxW[xC] array."""
    h, w = size
    if image.shape[:2] == (h, w):
        return image.astype(np.float32, copy=True)
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))
    chw = t[None, None] if t.ndim == 2 else t.permute(2, 0, 1)[None]
    out = F.interpolate(chw, size=(h, w), mode="bilinear", align_corners=False)[0]
    out = out[0] if image.ndim == 2 else out.permute(1, 2, 0)
    return out.numpy().astype(np.float32)


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize; output stays binary."""
    h, w = size
    rows = np.minimum((np.arange(h) * mask.shape[0] / h).astype(int), mask.shape[0] - 1)
    cols = np.minimum((np.arange(w) * mask.shape[1] / w).astype(int), mask.shape[1] - 1)
    return np.ascontiguousarray(mask[rows][:, cols])


def normalize(image: np.ndarray, norm: NormConfig) -> np.ndarray:
    if norm.mode == "unit":
        return image.astype(np.float32, copy=False)
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    return (image - mean) / std


def preprocess(
    image: np.ndarray,
    size: tuple[int, int] = (256, 256),
    norm: NormConfig | None = None,
) -> np.ndarray:
    if image.size == 0:
        raise DataError("empty image")
    img = _as_float01(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = resize_image(img, size)
    return normalize(img, norm or NormConfig())


def to_tensor(images: Sequence[np.ndarray], norm: NormConfig | None = None) -> torch.Tensor:
    """Stack HxWx3 images into a normalized Bx3xHxW float tensor."""
    norm = norm or NormConfig()
    arr = np.stack([normalize(im, norm) for im in images]).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


# --------------------------------------------------------------------------
# on-disk datasets

@dataclass
class LayoutConfig:
    centre_pattern: str = r"^centre(\d+)$"
    images_dir: str = "images"
    masks_dir: str = "masks"
    mask_suffix: str = ""
    # None: every filename stem is its own patient
    patient_pattern: str | None = None
    size: tuple[int, int] | None = (256, 256)


def _patient_id(stem: str, centre: int, layout: LayoutConfig, path: Path) -> str:
    if layout.patient_pattern is None:
        return f"c{centre}:{stem}"
    m = re.search(layout.patient_pattern, stem)
    if m is None:
        raise DataError(f"cannot parse patient id from {path} with {layout.patient_pattern!r}")
    return f"c{centre}:{m.group(1) if m.groups() else m.group(0)}"


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def _read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)


def load_polypgen(root: str | Path, layout: LayoutConfig | None = None) -> MultiCentreDataset:
    """One sample per image/mask pair under ``root/centre<k>/{images,masks}``."""
    layout = layout or LayoutConfig()
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    pat = re.compile(layout.centre_pattern)
    centre_dirs = []
    for d in sorted(root.iterdir()):
        m = pat.match(d.name)
        if d.is_dir() and m:
            centre_dirs.append((int(m.group(1)), d))
    if not centre_dirs:
        raise DataError(f"no centres found under {root}")

    samples = []
    for centre, d in sorted(centre_dirs):
        masks = {}
        for p in (d / layout.masks_dir).glob("*"):
            if p.suffix.lower() in IMAGE_EXTS:
                masks[p.stem] = p
        for img_path in sorted((d / layout.images_dir).glob("*")):
            if img_path.suffix.lower() not in IMAGE_EXTS:
                continue
            stem = img_path.stem
            mask_path = masks.get(stem + layout.mask_suffix)
            if mask_path is None:
                raise DataError(f"missing mask for image {img_path}")
            image = _as_float01(_read_image(img_path))
            mask = _read_mask(mask_path)
            if layout.size is not None:
                image = preprocess(image, layout.size)
                mask = resize_mask(mask, layout.size)
            elif mask.shape != image.shape[:2]:
                mask = resize_mask(mask, image.shape[:2])
            samples.append(
                Sample(
                    image=image,
                    mask=mask,
                    centre=centre,
                    patient_id=_patient_id(stem, centre, layout, img_path),
                    sample_id=f"c{centre}:{stem}",
                )
            )
    return MultiCentreDataset(samples, [c for c, _ in sorted(centre_dirs)])


MANIFEST = "manifest.csv"


def save_dataset(ds: MultiCentreDataset, root: str | Path) -> Path:
    """Write the centre tree, ``overlay_truth/`` rasters and a CSV manifest."""
    root = Path(root)
    rows = []
    for s in ds.samples:
        cdir = root / f"centre{s.centre}"
        stem = s.sample_id.replace(":", "_")
        img_p = cdir / "images" / f"{stem}.png"
        mask_p = cdir / "masks" / f"{stem}.png"
        img_p.parent.mkdir(parents=True, exist_ok=True)
        mask_p.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(np.round(s.image * 255).astype(np.uint8)).save(img_p)
        Image.fromarray(s.mask * 255).save(mask_p)
        ov = ""
        if ds.overlay_truth is not None:
            ov_p = cdir / "overlay_truth" / f"{stem}.png"
            ov_p.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(ds.overlay_truth[s.sample_id] * 255).save(ov_p)
            ov = str(ov_p.relative_to(root))
        rows.append(
            {
                "sample_id": s.sample_id,
                "centre": s.centre,
                "patient_id": s.patient_id,
                "image": str(img_p.relative_to(root)),
                "mask": str(mask_p.relative_to(root)),
                "overlay_truth": ov,
            }
        )
    with open(root / MANIFEST, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return root / MANIFEST


def load_dataset(root: str | Path, layout: LayoutConfig | None = None) -> MultiCentreDataset:
    """Load a manifest-described tree if present, otherwise fall back to PolypGen layout."""
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.exists():
        return load_polypgen(root, layout)
    samples, overlay = [], {}
    with open(manifest, newline="") as fh:
        for row in csv.DictReader(fh):
            image = _as_float01(_read_image(root / row["image"]))
            mask = _read_mask(root / row["mask"])
            samples.append(
                Sample(image, mask, int(row["centre"]), row["patient_id"], row["sample_id"])
            )
            if row.get("overlay_truth"):
                overlay[row["sample_id"]] = _read_mask(root / row["overlay_truth"])
    centres = sorted({s.centre for s in samples})
    return MultiCentreDataset(samples, centres, overlay or None)


# --------------------------------------------------------------------------
# synthetic multi-centre data

OVERLAY_STYLES = ("corner_text", "side_widget", "border", "none")


@dataclass
class OverlayGeometry:
    """Overlay footprint as fractions of the image side."""

    text_box: tuple[float, float] = (0.375, 0.1875)  # width, height
    widget: tuple[float, float] = (0.25, 0.5)
    border: float = 0.046875

    def rects(self, style: str, size: int) -> list[tuple[int, int, int, int]]:
        """Overlay rectangles ``(r0, r1, c0, c1)`` (half-open) for ``style``."""
        if style == "corner_text":
            w, h = round(self.text_box[0] * size), round(self.text_box[1] * size)
            return [(0, h, size - w, size)]
        if style == "side_widget":
            w, h = round(self.widget[0] * size), round(self.widget[1] * size)
            r0 = (size - h) // 2
            return [(r0, r0 + h, 0, w)]
        if style == "border":
            b = round(self.border * size)
            return [(0, b, 0, size), (size - b, size, 0, size), (0, size, 0, b), (0, size, size - b, size)]
        if style == "none":
            return []
        raise DataError(f"unknown overlay style {style!r}")

    def area_fraction(self, style: str, size: int) -> float:
        m = np.zeros((size, size), dtype=bool)
        for r0, r1, c0, c1 in self.rects(style, size):
            m[r0:r1, c0:c1] = True
        return float(m.mean())


@dataclass
class SynthConfig:
    num_centres: int = 3
    samples_per_centre: int = 200
    samples_per_patient: int = 2
    image_size: int = 64
    styles: tuple[str, ...] = ("corner_text", "side_widget", "border")
    geometry: OverlayGeometry = field(default_factory=OverlayGeometry)
    polyp_radius: tuple[float, float] = (0.1, 0.22)  # semi-axis range, fraction of side
    polyp_contrast: tuple[float, float] = (0.12, 0.3)
    centre_tint: float = 0.06
    noise: float = 0.03
    edge_fade_prob: float = 0.5  # per side, all centres

    def style_of(self, centre: int) -> str:
        return self.styles[(centre - 1) % len(self.styles)]


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.standard_normal((cells, cells)).astype(np.float32)
    return resize_image(coarse, (size, size))


def _glyphs(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Blocky bright strokes standing in for burnt-in text."""
    out = np.zeros((h, w), dtype=bool)
    for row in range(1, h - 2, 4):
        col = 1
        while col < w - 3:
            glyph = rng.random((3, 2)) < 0.6
            out[row : row + 3, col : col + 2] = glyph
            col += 3
    return out


def _draw_overlay(img: np.ndarray, style: str, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    size = cfg.image_size
    truth = np.zeros((size, size), dtype=np.uint8)
    rects = cfg.geometry.rects(style, size)
    for r0, r1, c0, c1 in rects:
        truth[r0:r1, c0:c1] = 1
    if style == "corner_text":
        r0, r1, c0, c1 = rects[0]
        img[r0:r1, c0:c1] = (0.05, 0.05, 0.08)
        strokes = _glyphs(rng, r1 - r0, c1 - c0)
        img[r0:r1, c0:c1][strokes] = (0.95, 0.95, 0.95)
    elif style == "side_widget":
        # instrument-position schematic on a translucent dark panel
        r0, r1, c0, c1 = rects[0]
        h, w = r1 - r0, c1 - c0
        yy, xx = np.mgrid[0:h, 0:w]
        cy = rng.uniform(0.3, 0.7) * h
        ring = np.abs(np.hypot(yy - cy, xx - w / 2) - w * 0.3) < 0.8
        cy2 = (cy + h / 2) % h
        dot = np.hypot(yy - cy2, xx - w / 2) < w * 0.18
        patch = img[r0:r1, c0:c1]
        patch *= 0.35
        patch[ring] = (0.3, 0.95, 0.4)
        patch[dot] = (0.95, 0.95, 0.3)
    elif style == "border":
        for r0, r1, c0, c1 in rects:
            img[r0:r1, c0:c1] = 0.0
    return truth


def _make_sample(cfg: SynthConfig, centre: int, tint: np.ndarray, rng: np.random.Generator):
    size = cfg.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    base = np.array([0.72, 0.38, 0.32], dtype=np.float32) + tint
    tex = 0.08 * _smooth_noise(rng, size, 6) + 0.03 * _smooth_noise(rng, size, 16)
    vignette = 1.0 - 0.35 * (np.hypot(yy - size / 2, xx - size / 2) / (size / 2)) ** 2
    img = (base[None, None] + tex[..., None]) * vignette[..., None]
    # shared nuisance: soft dark fall-off on random sides, so that tissue at the
    # image periphery is not by itself evidence for any centre
    depth_to = (yy, size - 1 - yy, xx, size - 1 - xx)
    for side, d in zip(rng.random(4) < cfg.edge_fade_prob, depth_to):
        width = rng.uniform(0.05, 0.14) * size
        if side:
            img *= (np.clip((d + 1) / width, 0.0, 1.0) ** 2)[..., None]

    style = cfg.style_of(centre)
    blocked = np.zeros((size, size), dtype=bool)
    for r0, r1, c0, c1 in cfg.geometry.rects(style, size):
        blocked[r0:r1, c0:c1] = True

    lo, hi = cfg.polyp_radius
    for _ in range(100):
        a = rng.uniform(lo, hi) * size
        b = rng.uniform(lo, hi) * size
        theta = rng.uniform(0, math.pi)
        cy, cx = rng.uniform(0.2, 0.8, size=2) * size
        ct, st = math.cos(theta), math.sin(theta)
        u = ((xx - cx) * ct + (yy - cy) * st) / a
        v = (-(xx - cx) * st + (yy - cy) * ct) / b
        r2 = u * u + v * v
        ellipse = r2 <= 1.0
        if not (ellipse & blocked).any():
            break
    contrast = rng.uniform(*cfg.polyp_contrast)
    shade = np.clip(1.0 - r2, 0.0, 1.0) ** 0.5
    polyp_col = np.array([0.18, 0.16, 0.14], dtype=np.float32) * contrast / 0.2
    img = img + (ellipse * (0.6 + 0.4 * shade))[..., None] * polyp_col
    img = img + cfg.noise * rng.standard_normal(img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)

    truth = _draw_overlay(img, style, cfg, rng)
    mask = (ellipse & (truth == 0)).astype(np.uint8)
    # 8-bit quantization so on-disk round trips are exact
    img = (np.round(img * 255) / 255).astype(np.float32)
    return img, mask, truth


def generate_synthetic(config: SynthConfig | None = None, seed: int = 0) -> MultiCentreDataset:
    """Deterministic multi-centre dataset with a distinct overlay style per centre."""
    cfg = config or SynthConfig()
    if cfg.num_centres < 2:
        raise DataError("at least 2 centres are required for leave-one-centre-out")
    for s in cfg.styles:
        if s not in OVERLAY_STYLES:
            raise DataError(f"unknown overlay style {s!r}")
    samples, truth = [], {}
    for centre in range(1, cfg.num_centres + 1):
        tint = substream(seed, "synth-tint", centre).uniform(-1, 1, 3).astype(np.float32) * cfg.centre_tint
        for i in range(cfg.samples_per_centre):
            rng = substream(seed, "synth", centre, i)
            img, mask, ov = _make_sample(cfg, centre, tint, rng)
            sid = f"c{centre}:{i:04d}"
            samples.append(Sample(img, mask, centre, f"c{centre}:p{i // cfg.samples_per_patient:03d}", sid))
            truth[sid] = ov
    return MultiCentreDataset(samples, list(range(1, cfg.num_centres + 1)), truth)


# --------------------------------------------------------------------------
# patient-level splits

@dataclass
class SplitSpec:
    held_out_centre: int
    train: list[str]
    val: list[str]
    test_in: list[str]
    test_out: list[str]
    seed: int
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratios"] = list(self.ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        d = dict(d)
        d["ratios"] = tuple(d["ratios"])
        return cls(**d)

    def hash(self) -> str:
        d = self.to_dict()
        for k in ("train", "val", "test_in", "test_out"):
            d[k] = sorted(d[k])
        return sha256_json(d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "SplitSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def allocate_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Floor each share, then hand out the remainder starting from the first split."""
    counts = [math.floor(n * r + 1e-9) for r in ratios]
    i = 0
    while sum(counts) < n:
        counts[i % len(counts)] += 1
        i += 1
    return counts


def split_patient_level(
    ds: MultiCentreDataset,
    held_out_centre: int,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitSpec:
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {ratios}")
    if held_out_centre not in ds.centres:
        raise DataError(f"held-out centre {held_out_centre} not in {ds.centres}")

    patient_centre: dict[str, int] = {}
    by_patient: dict[str, list[str]] = {}
    for s in ds.samples:
        c = patient_centre.setdefault(s.patient_id, s.centre)
        if c != s.centre:
            raise DataError(f"patient {s.patient_id} spans centres {c} and {s.centre}")
        by_patient.setdefault(s.patient_id, []).append(s.sample_id)

    patients = sorted(p for p, c in patient_centre.items() if c != held_out_centre)
    if len(patients) < 3:
        raise DataError(f"need at least 3 in-distribution patients, have {len(patients)}")
    order = substream(seed, "split").permutation(len(patients))
    shuffled = [patients[i] for i in order]
    n_train, n_val, _ = allocate_counts(len(shuffled), ratios)
    groups = (shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :])
    train, val, test_in = ([sid for p in g for sid in by_patient[p]] for g in groups)
    return SplitSpec(
        held_out_centre=held_out_centre,
        train=train,
        val=val,
        test_in=test_in,
        test_out=ds.ids(held_out_centre),
        seed=seed,
        ratios=tuple(ratios),
    )


# --------------------------------------------------------------------------
# standard augmentation

@dataclass
class AugmentConfig:
    flip_p: float = 0.5
    rotate_p: float = 0.5
    jitter_p: float = 0.3
    brightness: tuple[float, float] = (0.8, 1.2)
    contrast: tuple[float, float] = (0.8, 1.2)
    saturation: tuple[float, float] = (0.8, 1.2)
    hue: tuple[float, float] = (-0.05, 0.05)


@dataclass(frozen=True)
class AugmentParams:
    hflip: bool = False
    vflip: bool = False
    rot90: int = 0  # quarter turns, counter-clockwise
    jitter: tuple[float, float, float, float] | None = None  # brightness, contrast, saturation, hue

    @property
    def is_identity(self) -> bool:
        return not (self.hflip or self.vflip or self.rot90 % 4 or self.jitter)


def sample_augment_params(rng: np.random.Generator, cfg: AugmentConfig | None = None) -> AugmentParams:
    cfg = cfg or AugmentConfig()
    # fixed draw count keeps the stream aligned regardless of outcomes
    u = rng.random(4)
    k = int(rng.integers(1, 4))
    j = (
        rng.uniform(*cfg.brightness),
        rng.uniform(*cfg.contrast),
        rng.uniform(*cfg.saturation),
        rng.uniform(*cfg.hue),
    )
    return AugmentParams(
        hflip=bool(u[0] < cfg.flip_p),
        vflip=bool(u[1] < cfg.flip_p),
        rot90=k if u[2] < cfg.rotate_p else 0,
        jitter=tuple(float(x) for x in j) if u[3] < cfg.jitter_p else None,
    )


def apply_geometric(arr: np.ndarray, params: AugmentParams) -> np.ndarray:
    out = arr
    if params.hflip:
        out = out[:, ::-1]
    if params.vflip:
        out = out[::-1]
    if params.rot90 % 4:
        out = np.rot90(out, params.rot90, axes=(0, 1))
    return np.ascontiguousarray(out)


def colour_jitter(image: np.ndarray, jitter: tuple[float, float, float, float]) -> np.ndarray:
    brightness, contrast, saturation, hue = jitter
    img = np.clip(image * brightness, 0, 1)
    grey = img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    img = np.clip((img - grey.mean()) * contrast + grey.mean(), 0, 1)
    grey = (img @ np.array([0.299, 0.587, 0.114], dtype=np.float32))[..., None]
    img = np.clip((img - grey) * saturation + grey, 0, 1)
    if hue:
        hsv = rgb_to_hsv(img)
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        img = hsv_to_rgb(hsv)
    return img.astype(np.float32)


def apply_augment(
    sample: Sample, cam_bin: np.ndarray | None, params: AugmentParams
) -> tuple[Sample, np.ndarray | None]:
    if cam_bin is not None and cam_bin.shape != sample.mask.shape:
        raise DataError(f"keep-mask {cam_bin.shape} does not match image {sample.mask.shape}")
    image = apply_geometric(sample.image, params)
    if params.jitter is not None:
        image = colour_jitter(image, params.jitter)
    out = replace(sample, image=image, mask=apply_geometric(sample.mask, params))
    return out, None if cam_bin is None else apply_geometric(cam_bin, params)


def standard_augment(
    sample: Sample,
    cam_bin: np.ndarray | None,
    rng: np.random.Generator,
    cfg: AugmentConfig | None = None,
) -> tuple[Sample, np.ndarray | None]:
    return apply_augment(sample, cam_bin, sample_augment_params(rng, cfg))


def iter_batches(ids: Sequence[str], batch_size: int) -> Iterable[list[str]]:
    for i in range(0, len(ids), batch_size):
        yield list(ids[i : i + batch_size])
