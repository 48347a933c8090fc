"""Synthetic crack imagery: textured plates with dark polyline fractures.

Each sample is a value-noise background (a stand-in for concrete or
pavement texture) crossed by one or two piecewise-linear cracks 1-4 px
thick. The mask is the exact rasterization stencil of the cracks, and
the generator is seeded per sample index so datasets are reproducible
bit-for-bit and samples can be generated independently.
"""

import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .pngio import load_image, load_mask, save_png

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SegSample:
    image: np.ndarray  # [3,H,W] float64 in [0,1]
    mask: np.ndarray   # [1,H,W] float64 in {0,1}
    id: str


def value_noise(rng, size: int) -> np.ndarray:
    """Multi-octave bilinear value noise in [0,1]."""
    out = np.zeros((size, size))
    for cells, amp in ((4, 0.5), (8, 0.3), (16, 0.2)):
        grid = rng.random((cells + 1, cells + 1))
        pos = np.linspace(0.0, cells, size)
        i0 = np.minimum(pos.astype(int), cells - 1)
        f = pos - i0
        rows = (grid[i0, :] * (1 - f)[:, None] + grid[i0 + 1, :] * f[:, None])
        out += amp * (rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f)
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)


def _polyline(rng, size: int) -> np.ndarray:
    """Waypoints [k,2] of a meandering path crossing most of the tile.

    Starts near one edge and walks toward the far side, so every crack
    traverses the plate rather than dying in a corner.
    """
    n_seg = int(rng.integers(4, 7))
    angle = rng.uniform(0.0, 2 * np.pi)
    heading = np.array([np.sin(angle), np.cos(angle)])
    lateral = np.array([heading[1], -heading[0]])
    center = np.full(2, size / 2.0)
    start = center - heading * (size * 0.45) + lateral * rng.uniform(
        -0.25, 0.25) * size
    pts = [start]
    step = size * rng.uniform(0.75, 0.95) / n_seg
    for _ in range(n_seg):
        angle += rng.uniform(-0.5, 0.5)  # momentum keeps it crack-like
        pts.append(pts[-1] + step * np.array([np.sin(angle), np.cos(angle)]))
    return np.clip(np.stack(pts), 1.0, size - 2.0)


def _path_distance(pts: np.ndarray, size: int) -> np.ndarray:
    """Per-pixel distance from the pixel center to the polyline."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist2 = np.full((size, size), np.inf)
    for a, b in zip(pts[:-1], pts[1:]):
        d = b - a
        seg_len2 = float(d @ d)
        if seg_len2 == 0.0:
            continue
        t = ((yy - a[0]) * d[0] + (xx - a[1]) * d[1]) / seg_len2
        t = np.clip(t, 0.0, 1.0)
        np.minimum(dist2, (yy - (a[0] + t * d[0])) ** 2 +
                   (xx - (a[1] + t * d[1])) ** 2, out=dist2)
    return np.sqrt(dist2)


def _crack_mask(rng, size: int) -> np.ndarray:
    """Stencil with crack fraction pulled near the ~3% target.

    Draws polylines until the covered fraction lands in a window around
    the target; out-of-window draws are rare (1 px wisps, double-crack
    slabs) and keeping per-sample coverage tight also keeps image
    statistics comparable across samples. The stencil thresholds the
    path distance at thickness/2 exactly.
    """
    lo, hi = 0.035, 0.065
    best, best_gap = None, np.inf
    for _ in range(8):
        mask = np.zeros((size, size))
        n_cracks = 2 if rng.random() < 0.15 else 1
        for _ in range(n_cracks):
            thickness = int(rng.choice([1, 2, 3, 4],
                                       p=[0.01, 0.04, 0.25, 0.7]))
            dist = _path_distance(_polyline(rng, size), size)
            mask[dist <= thickness / 2.0] = 1.0
        frac = mask.mean()
        if lo <= frac <= hi:
            return mask
        gap = lo - frac if frac < lo else frac - hi
        if gap < best_gap:
            best, best_gap = mask, gap
    return best


def make_sample(size: int, seed: int, index: int) -> SegSample:
    rng = np.random.default_rng([seed, index])
    bg = 0.45 + 0.5 * value_noise(rng, size)
    gy, gx = rng.uniform(-0.04, 0.04, 2)
    ramp = np.linspace(-0.5, 0.5, size)
    bg = bg + gy * ramp[:, None] + gx * ramp[None, :]
    bg = bg + rng.normal(0.0, 0.005, (size, size))
    # fixed brightness/contrast so plate statistics match across samples
    bg = (bg - bg.mean()) / (bg.std() + 1e-9) * 0.08 + 0.7

    mask = _crack_mask(rng, size)
    crack_tone = 0.02 + 0.04 * rng.random((size, size))
    gray = np.where(mask > 0, crack_tone, bg)
    tint = np.array([1.0, 0.97, 0.93])  # warm concrete cast
    image = np.clip(gray[None, :, :] * tint[:, None, None], 0.0, 1.0)
    return SegSample(image=image, mask=mask[None, :, :],
                     id=f"sample_{index:04d}")


def split_sizes(n: int) -> tuple:
    """70/10/20 by truncation; remainder goes to test."""
    n_train = int(n * 0.7)
    n_val = int(n * 0.1)
    return n_train, n_val, n - n_train - n_val


def synth_dataset(n: int, size: int, seed: int) -> dict:
    """Returns {"train": [SegSample], "val": [...], "test": [...]}."""
    if n < 1:
        raise ConfigError(f"need at least one sample, got n={n}")
    if size % 32 != 0:
        raise ConfigError(f"size must be divisible by 32, got {size}")
    samples = [make_sample(size, seed, i) for i in range(n)]
    n_train, n_val, _ = split_sizes(n)
    return {"train": samples[:n_train],
            "val": samples[n_train:n_train + n_val],
            "test": samples[n_train + n_val:]}


def stack_samples(samples) -> tuple:
    """[SegSample] -> (images [M,3,H,W], masks [M,H,W]) for the trainer."""
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask[0] for s in samples])
    return images, masks


def write_dataset(out_dir: str, splits: dict) -> None:
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    lines = []
    for split in SPLIT_NAMES:
        for s in splits.get(split, []):
            save_png(os.path.join(img_dir, f"{s.id}.png"), s.image)
            save_png(os.path.join(mask_dir, f"{s.id}.png"), s.mask)
            lines.append(f"{s.id} {split}\n")
    with open(os.path.join(out_dir, "split.txt"), "w") as fh:
        fh.writelines(lines)


def load_dataset(root: str) -> dict:
    """Read the images/ masks/ split.txt layout back into split lists."""
    split_path = os.path.join(root, "split.txt")
    if not os.path.isfile(split_path):
        raise ConfigError(f"{root}: missing split.txt")
    splits = {name: [] for name in SPLIT_NAMES}
    with open(split_path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
                raise ConfigError(f"{split_path}:{lineno}: expected "
                                  f"'<stem> train|val|test', got {line!r}")
            stem, split = parts
            image = load_image(os.path.join(root, "images", f"{stem}.png"))
            mask = load_mask(os.path.join(root, "masks", f"{stem}.png"))
            if image.shape[1:] != mask.shape:
                raise ConfigError(f"{stem}: image {image.shape[1:]} vs "
                                  f"mask {mask.shape}")
            splits[split].append(
                SegSample(image=image, mask=mask[None], id=stem))
    return splits
