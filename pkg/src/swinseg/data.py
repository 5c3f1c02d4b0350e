"""Synthetic segmentation data, augmentation, and PPM/PGM file handling.

The generator paints anti-aliased disks, rectangles and diamonds (one shape
kind per foreground class) over a textured background.  Labels come from the
exact pixel-center-in-shape predicate, so the ground truth is the generating
geometry itself.  Everything is deterministic per seed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed image/label files or inconsistent pairs."""


@dataclass
class SynthSpec:
    img_size: int = 32
    num_classes: int = 3
    num_samples: int = 64
    min_shapes: int = 2
    max_shapes: int = 3
    # resample an image until every foreground class keeps at least one pixel
    # (only enforceable when enough shapes are drawn)
    ensure_all_classes: bool = True

    def validate(self) -> "SynthSpec":
        if not 2 <= self.num_classes <= 4:
            raise ValueError("num_classes must be in 2..4")
        if self.img_size < 8 or self.num_samples < 1:
            raise ValueError("img_size >= 8 and num_samples >= 1 required")
        if not 0 <= self.min_shapes <= self.max_shapes:
            raise ValueError("need 0 <= min_shapes <= max_shapes")
        return self

    @property
    def _enforce_presence(self) -> bool:
        return (self.ensure_all_classes
                and self.min_shapes >= self.num_classes - 1)


@dataclass
class SampleBatch:
    """Paired images (B, H, W, 3) in [0, 1] and label masks (B, H, W)."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.images.shape[:3] != self.labels.shape:
            raise DataError(f"image/label shapes inconsistent: "
                            f"{self.images.shape} vs {self.labels.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "SampleBatch":
        return SampleBatch(self.images[idx], self.labels[idx])


_CLASS_COLORS = np.array([
    [0.85, 0.25, 0.25],   # class 1: disks
    [0.25, 0.80, 0.30],   # class 2: rectangles
    [0.25, 0.35, 0.90],   # class 3: diamonds
])


def _coverage_and_mask(kind: int, cy, cx, ry, rx, yy, xx):
    """Anti-aliased coverage in [0,1] plus the exact pixel-center mask."""
    dy, dx = yy - cy, xx - cx
    if kind == 1:      # disk of radius ry
        dist = np.sqrt(dy ** 2 + dx ** 2)
        return np.clip(ry + 0.5 - dist, 0.0, 1.0), dist <= ry
    if kind == 2:      # axis-aligned rectangle with half-extents (ry, rx)
        cov = (np.clip(ry + 0.5 - np.abs(dy), 0.0, 1.0)
               * np.clip(rx + 0.5 - np.abs(dx), 0.0, 1.0))
        return cov, (np.abs(dy) <= ry) & (np.abs(dx) <= rx)
    dist = np.abs(dy) + np.abs(dx)   # diamond with half-diagonal ry
    return np.clip(ry + 0.5 - dist, 0.0, 1.0), dist <= ry


def synth_dataset(spec: SynthSpec, seed: int) -> tuple[SampleBatch, np.ndarray]:
    """Generate the dataset and the per-sample class pixel counts.

    The counts array (B, K) is maintained incrementally while painting and
    must equal the histogram of the final label masks.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    n, size, k = spec.num_samples, spec.img_size, spec.num_classes
    images = np.zeros((n, size, size, 3), dtype=np.float32)
    labels = np.zeros((n, size, size), dtype=np.int64)
    counts = np.zeros((n, k), dtype=np.int64)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5

    for b in range(n):
        while True:
            img, label, cnt = _render_sample(spec, rng, yy, xx)
            if not spec._enforce_presence or (cnt[1:] > 0).all():
                break
        # quantize to the 8-bit grid so PPM round trips are exact
        images[b] = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
        labels[b] = label
        counts[b] = cnt

    return SampleBatch(images, labels), counts


def _render_sample(spec: SynthSpec, rng: np.random.Generator, yy, xx):
    size, k = spec.img_size, spec.num_classes
    # near-neutral background so it never resembles a class color
    base = rng.uniform(0.40, 0.60) + rng.uniform(-0.02, 0.02, size=3)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    wave = 0.04 * (np.sin(2 * np.pi * yy / size + phase[0])
                   + np.sin(2 * np.pi * xx / size + phase[1]))
    img = base[None, None, :] + wave[:, :, None]
    img += rng.normal(0.0, 0.02, size=(size, size, 3))
    label = np.zeros((size, size), dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    counts[0] = size * size

    n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))
    for s in range(n_shapes):
        # cycle through the foreground classes first so each tends to appear
        cid = 1 + s % (k - 1) if s < k - 1 else int(rng.integers(1, k))
        ry = rng.uniform(size / 6.0, size / 3.0)
        rx = ry if cid != 2 else rng.uniform(size / 6.0, size / 3.0)
        cy = rng.uniform(ry, size - ry)
        cx = rng.uniform(rx, size - rx)
        cov, mask = _coverage_and_mask(cid, cy, cx, ry, rx, yy, xx)
        color = np.clip(_CLASS_COLORS[cid - 1]
                        + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)
        img = cov[:, :, None] * color[None, None, :] + (1 - cov[:, :, None]) * img
        old = label[mask]
        counts -= np.bincount(old, minlength=k)
        counts[cid] += int(mask.sum())
        label[mask] = cid
    return img, label, counts


def train_val_split(batch: SampleBatch) -> tuple[SampleBatch, SampleBatch]:
    """Fixed 80/20 split: every fifth sample index goes to validation."""
    idx = np.arange(len(batch))
    val = idx % 5 == 4
    return batch.subset(~val), batch.subset(val)


def augment(batch: SampleBatch, rng: np.random.Generator) -> SampleBatch:
    """Random flips and k*90-degree rotations, identical for image and label."""
    images = batch.images.copy()
    labels = batch.labels.copy()
    for b in range(len(batch)):
        img, lbl = images[b], labels[b]
        if rng.random() < 0.5:
            img, lbl = np.flip(img, axis=1), np.flip(lbl, axis=1)
        if rng.random() < 0.5:
            img, lbl = np.flip(img, axis=0), np.flip(lbl, axis=0)
        k = int(rng.integers(0, 4))
        if k:
            img = np.rot90(img, k, axes=(0, 1))
            lbl = np.rot90(lbl, k, axes=(0, 1))
        images[b], labels[b] = img, lbl
    return SampleBatch(images, labels)


# -- Netpbm files ---------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_header(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Parse 'P6/P5 W H MAX' with comments; returns (w, h, maxval, offset)."""
    if not data.startswith(magic):
        raise DataError(f"bad magic: expected {magic.decode()}, "
                        f"got {data[:2]!r}")
    pos = 2
    vals = []
    for _ in range(3):
        m = _TOKEN.match(data, pos)
        if not m:
            raise DataError("truncated header")
        tok = m.group(1)
        if not tok.isdigit():
            raise DataError(f"malformed header token {tok!r}")
        vals.append(int(tok))
        pos = m.end()
    if pos >= len(data) or data[pos:pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise DataError("missing whitespace after header")
    w, h, maxval = vals
    if not (w > 0 and h > 0 and 0 < maxval < 256):
        raise DataError(f"unsupported header values w={w} h={h} max={maxval}")
    return w, h, maxval, pos + 1


def read_ppm(path) -> np.ndarray:
    """Binary P6 -> uint8 array (H, W, 3)."""
    data = Path(path).read_bytes()
    w, h, maxval, off = _read_header(data, b"P6")
    need = w * h * 3
    raw = data[off:off + need]
    if len(raw) != need:
        raise DataError(f"truncated pixel data: expected {need} bytes, "
                        f"got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)


def write_ppm(path, image: np.ndarray) -> None:
    """Float image in [0, 1] (H, W, 3) -> binary P6."""
    h, w, _ = image.shape
    u8 = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(u8.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary P5 -> int64 array (H, W); pixel value is the class id."""
    data = Path(path).read_bytes()
    w, h, maxval, off = _read_header(data, b"P5")
    need = w * h
    raw = data[off:off + need]
    if len(raw) != need:
        raise DataError(f"truncated pixel data: expected {need} bytes, "
                        f"got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(h, w).astype(np.int64)


def write_pgm(path, labels: np.ndarray) -> None:
    h, w = labels.shape
    if labels.min() < 0 or labels.max() > 255:
        raise DataError("label values must fit one byte")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(labels.astype(np.uint8).tobytes())


def load_sample(img_path, label_path, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Load one (image, label) pair with dimension and range cross-checks."""
    img = read_ppm(img_path).astype(np.float32) / 255.0
    lbl = read_pgm(label_path)
    if img.shape[:2] != lbl.shape:
        raise DataError(f"dimension mismatch: image {img.shape[:2]} vs "
                        f"label {lbl.shape}")
    if lbl.max() >= num_classes:
        pos = np.argwhere(lbl >= num_classes)[0]
        raise DataError(f"label value {int(lbl[tuple(pos)])} >= num_classes "
                        f"{num_classes} at pixel ({pos[0]}, {pos[1]})")
    return img, lbl


def save_dataset(directory, batch: SampleBatch) -> None:
    """Write sample_NNNN.ppm / sample_NNNN.pgm pairs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(batch)):
        write_ppm(directory / f"sample_{i:04d}.ppm", batch.images[i])
        write_pgm(directory / f"sample_{i:04d}.pgm", batch.labels[i])


def load_dataset(directory, num_classes: int) -> SampleBatch:
    directory = Path(directory)
    ppms = sorted(directory.glob("*.ppm"))
    if not ppms:
        raise DataError(f"no .ppm files found in {directory}")
    images, labels = [], []
    for ppm in ppms:
        pgm = ppm.with_suffix(".pgm")
        if not pgm.exists():
            raise DataError(f"missing label file {pgm}")
        img, lbl = load_sample(ppm, pgm, num_classes)
        if images and img.shape != images[0].shape:
            raise DataError(f"{ppm.name}: resolution {img.shape[:2]} differs "
                            f"from the first sample {images[0].shape[:2]}")
        images.append(img)
        labels.append(lbl)
    return SampleBatch(np.stack(images), np.stack(labels))
