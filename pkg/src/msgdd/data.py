"""Paired image/mask datasets, pyramids, augmentation and synthetic ellipses."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage

from .core import seeded_rng


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class PairedSample:
    input: np.ndarray   # (C, H, W) float32 in [-1, 1]
    target: np.ndarray  # (C, H, W) float32 in {-1, +1}
    id: str


@dataclass(frozen=True)
class DatasetManifest:
    root: str
    train: int = 699
    val: int = 100
    test: int = 200
    size: int = 256


# -- pyramids -----------------------------------------------------------------

def build_pyramid(image, levels: int) -> list:
    """Levels 1..``levels`` of repeated 2x2 average pooling.

    Accepts (C, H, W) or (N, C, H, W) tensors or arrays; returns the same kind.
    """
    as_numpy = isinstance(image, np.ndarray)
    x = torch.from_numpy(image) if as_numpy else image
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    h, w = x.shape[-2:]
    if h % 2**levels or w % 2**levels:
        raise ValueError(f"resolution {h}x{w} not divisible by 2^{levels}")
    out = []
    for _ in range(levels):
        x = F.avg_pool2d(x, 2)
        level = x[0] if squeeze else x
        out.append(level.numpy() if as_numpy else level)
    return out


def match_channels(pyramid: list, channels: int) -> list:
    """Project each level to ``channels`` by channel averaging then replication."""
    out = []
    for level in pyramid:
        if level.shape[-3] != channels:
            level = level.mean(dim=-3, keepdim=True)
            reps = [1] * level.dim()
            reps[-3] = channels
            level = level.repeat(*reps)
        out.append(level)
    return out


# -- disk IO ------------------------------------------------------------------

def pad_to_square(img: Image.Image, fill: int = 0) -> Image.Image:
    w, h = img.size
    side = max(w, h)
    if w == h:
        return img
    canvas = Image.new(img.mode, (side, side), fill)
    canvas.paste(img, ((side - w) // 2, (side - h) // 2))
    return canvas


def _read(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            im.load()
    except (OSError, ValueError) as exc:
        raise DatasetError(f"unreadable image {path}: {exc}") from exc
    im = pad_to_square(im).resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float32)[None]


def to_unit(pixels: np.ndarray) -> np.ndarray:
    return pixels / 127.5 - 1.0


def binarize(values: np.ndarray, threshold: float = 0.0) -> np.ndarray:
    return np.where(values > threshold, 1.0, -1.0).astype(np.float32)


def load_dataset(manifest: DatasetManifest) -> dict[str, list[PairedSample]]:
    """Read ``root/images`` and ``root/masks`` (identical basenames) into sorted splits."""
    root = Path(manifest.root)
    images, masks = root / "images", root / "masks"
    if not images.is_dir():
        raise DatasetError(f"no pairs found: {images} is not a directory")
    names = sorted(p.name for p in images.glob("*.png"))
    if not names:
        raise DatasetError(f"no pairs found under {root}")
    missing = [n for n in names if not (masks / n).is_file()]
    if missing:
        raise DatasetError(f"missing mask partner for {missing[0]} ({len(missing)} total)")
    wanted = manifest.train + manifest.val + manifest.test
    if wanted != len(names):
        raise DatasetError(
            f"split sizes {manifest.train}/{manifest.val}/{manifest.test} sum to {wanted}, "
            f"but {len(names)} pairs were found"
        )
    samples = []
    for name in names:
        img = to_unit(_read(images / name, manifest.size))
        mask = binarize(to_unit(_read(masks / name, manifest.size)))
        samples.append(PairedSample(img.astype(np.float32), mask, Path(name).stem))
    a, b = manifest.train, manifest.train + manifest.val
    return {"train": samples[:a], "val": samples[a:b], "test": samples[b:]}


def save_dataset(samples, root) -> None:
    """Write samples as 8-bit grayscale PNGs in the ``images``/``masks`` layout."""
    root = Path(root)
    for sub in ("images", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        for sub, arr in (("images", s.input), ("masks", s.target)):
            pixels = np.clip(np.rint((arr[0] + 1.0) * 127.5), 0, 255).astype(np.uint8)
            Image.fromarray(pixels, mode="L").save(root / sub / f"{s.id}.png")


# -- augmentation -------------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    flip_h: bool = False
    flip_v: bool = False
    angle: float = 0.0      # degrees
    scale: float = 1.0
    shift: tuple = (0.0, 0.0)  # pixels (rows, cols)

    @property
    def is_affine(self):
        return self.angle != 0.0 or self.scale != 1.0 or self.shift != (0.0, 0.0)


def sample_transform(rng: np.random.Generator, policy: str, size: int) -> Transform:
    if policy == "none":
        return Transform()
    if policy not in ("flips", "flips+affine"):
        raise ValueError(f"unknown augmentation policy {policy!r}")
    flip_h, flip_v = (bool(b) for b in rng.integers(0, 2, size=2))
    if policy == "flips":
        return Transform(flip_h, flip_v)
    return Transform(
        flip_h,
        flip_v,
        angle=float(rng.uniform(-15, 15)),
        scale=float(rng.uniform(0.95, 1.05)),
        shift=tuple(float(v) for v in rng.uniform(-0.04, 0.04, size=2) * size),
    )


def apply_transform(t: Transform, image: np.ndarray, mask: bool = False) -> np.ndarray:
    """Apply ``t`` to a (C, H, W) array; masks are re-binarized after resampling."""
    out = image
    if t.flip_h:
        out = out[..., ::-1]
    if t.flip_v:
        out = out[..., ::-1, :]
    if t.is_affine:
        h, w = out.shape[-2:]
        theta = math.radians(t.angle)
        # output -> input coordinate map about the image centre
        rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        matrix = rot / t.scale
        centre = np.array([(h - 1) / 2, (w - 1) / 2])
        offset = centre - matrix @ (centre + np.asarray(t.shift))
        out = np.stack([
            ndimage.affine_transform(ch, matrix, offset=offset, order=1, mode="constant", cval=-1.0)
            for ch in out
        ])
        if mask:
            out = binarize(out)
    return np.ascontiguousarray(out, dtype=np.float32)


def augment(sample: PairedSample, rng: np.random.Generator, policy: str = "flips") -> PairedSample:
    if policy == "none":
        return sample
    t = sample_transform(rng, policy, sample.input.shape[-1])
    return replace(
        sample,
        input=apply_transform(t, sample.input),
        target=apply_transform(t, sample.target, mask=True),
    )


# -- synthetic ellipses ------------------------------------------------------

def _smooth_noise(rng, size, sigma):
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma)
    return field / (field.std() + 1e-12)


def synth_shapes(n: int, resolution: int = 64, seed: int = 1, prefix: str = "synth") -> list[PairedSample]:
    """Textured noisy backgrounds with one bright elliptical ring; targets are the filled ellipse."""
    if n < 1:
        raise ValueError("n must be ≥ 1")
    if resolution < 8 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two ≥ 8, got {resolution}")
    rng = seeded_rng(seed, 7)
    r = resolution
    yy, xx = np.mgrid[0:r, 0:r].astype(np.float64) + 0.5
    ring_width = max(1.0, r / 40)
    samples = []
    for i in range(n):
        cy, cx = r * (0.5 + rng.uniform(-0.08, 0.08, size=2))
        a, b = r * rng.uniform(0.15, 0.38, size=2)
        phi = rng.uniform(0, math.pi)
        noise = rng.uniform(0.15, 0.35)
        dy, dx = yy - cy, xx - cx
        u = dx * math.cos(phi) + dy * math.sin(phi)
        v = -dx * math.sin(phi) + dy * math.cos(phi)
        rho = np.sqrt((u / a) ** 2 + (v / b) ** 2)
        inside = rho <= 1.0
        # distance to the contour, approximately in pixels
        dist = np.abs(rho - 1.0) * min(a, b)
        ring = np.exp(-0.5 * (dist / ring_width) ** 2)
        texture = 0.25 * _smooth_noise(rng, r, 1.5)
        img = -0.55 + texture + 0.15 * inside + 1.2 * ring
        img = img + noise * rng.standard_normal((r, r))
        frac = inside.mean()
        assert 0.05 <= frac <= 0.6, f"foreground fraction {frac:.3f} out of range"
        samples.append(PairedSample(
            np.clip(img, -1, 1).astype(np.float32)[None],
            np.where(inside, 1.0, -1.0).astype(np.float32)[None],
            f"{prefix}_{i:05d}",
        ))
    return samples


def load_splits(config) -> dict[str, list[PairedSample]]:
    """Dataset splits for a RunConfig: the on-disk root when set, synthetic ellipses otherwise."""
    if config.data_root:
        return load_dataset(DatasetManifest(
            config.data_root, config.split_train, config.split_val, config.split_test, config.image_size,
        ))
    total = config.split_train + config.split_val + config.split_test
    samples = synth_shapes(total, config.image_size, config.data_seed)
    a, b = config.split_train, config.split_train + config.split_val
    return {"train": samples[:a], "val": samples[a:b], "test": samples[b:]}


def batches(samples, batch_size, rng=None, policy="none"):
    """Yield (input, target) float32 tensors; shuffled and augmented when ``rng`` is given."""
    order = np.arange(len(samples)) if rng is None else rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        if rng is not None:
            chunk = [augment(s, rng, policy) for s in chunk]
        x = torch.from_numpy(np.stack([s.input for s in chunk]))
        y = torch.from_numpy(np.stack([s.target for s in chunk]))
        yield x, y
