"""Synthetic glyph datasets and portable pixmap (PGM/PPM) I/O.

Item classes are named glyph kinds (``cross``, ``disc``, ...). Face
identities are arbitrary names; each name deterministically selects a random
block code, so any identity can be rendered again later
(e.g. by the simulator) without storing its glyph.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .training import Dataset

MANIFEST = "manifest.tsv"


# -- pixmap files -----------------------------------------------------------

def write_pnm(path, image: np.ndarray):
    """Write a uint8 image, ``(H, W)`` or ``(1, H, W)`` as P5, ``(3, H, W)`` as P6."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError("pixmap images must be uint8")
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        magic, h, w, body = b"P5", img.shape[0], img.shape[1], img.tobytes()
    elif img.ndim == 3 and img.shape[0] == 3:
        magic, h, w = b"P6", img.shape[1], img.shape[2]
        body = np.ascontiguousarray(img.transpose(1, 2, 0)).tobytes()
    else:
        raise ValueError(f"cannot write image of shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h) + body)


def read_pnm(path) -> np.ndarray:
    """Read a binary P5/P6 file as uint8 ``(C, H, W)``."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace before raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported")
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise ValueError(f"{path}: not a binary P5/P6 pixmap")
    raster = np.frombuffer(data, dtype=np.uint8, count=w * h * channels, offset=pos)
    if channels == 1:
        return raster.reshape(1, h, w).copy()
    return raster.reshape(h, w, 3).transpose(2, 0, 1).copy()


def to_float(images: np.ndarray) -> np.ndarray:
    return np.asarray(images, dtype=np.float64) / 255.0


# -- glyph rendering --------------------------------------------------------

def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return yy, xx


def _disc(yy, xx, cy, cx, r):
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= r * r).astype(np.float64)


def _ring(yy, xx, cy, cx, r, t):
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return (np.abs(d - r) <= t / 2).astype(np.float64)


def _segment(yy, xx, y0, x0, y1, x1, t):
    py, px = yy - y0, xx - x0
    dy, dx = y1 - y0, x1 - x0
    u = np.clip((py * dy + px * dx) / max(dy * dy + dx * dx, 1e-9), 0.0, 1.0)
    return ((py - u * dy) ** 2 + (px - u * dx) ** 2 <= (t / 2) ** 2).astype(np.float64)


def _box(yy, xx, cy, cx, half, t):
    outer = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    inner = (np.abs(yy - cy) <= half - t) & (np.abs(xx - cx) <= half - t)
    return (outer & ~inner).astype(np.float64)


def _item_cross(yy, xx, c, s):
    return np.maximum(_segment(yy, xx, c - s, c, c + s, c, 3), _segment(yy, xx, c, c - s, c, c + s, 3))


def _item_disc(yy, xx, c, s):
    return _disc(yy, xx, c, c, 0.7 * s)


def _item_bar(yy, xx, c, s):
    return _segment(yy, xx, c, c - 0.8 * s, c, c + 0.8 * s, 7)


def _item_ring(yy, xx, c, s):
    return _ring(yy, xx, c, c, 0.6 * s, 2.5)


def _item_square(yy, xx, c, s):
    return _box(yy, xx, c, c, 1.0 * s, 2.5)


def _item_diag(yy, xx, c, s):
    return _segment(yy, xx, c - s, c - s, c + s, c + s, 3)


def _item_triangle(yy, xx, c, s):
    top, left, right = (c - s, c), (c + s, c - s), (c + s, c + s)
    return np.maximum.reduce([_segment(yy, xx, *a, *b, 2.5)
                              for a, b in ((top, left), (left, right), (right, top))])


ITEM_KINDS = {
    "cross": _item_cross,
    "disc": _item_disc,
    "bar": _item_bar,
    "ring": _item_ring,
    "square": _item_square,
    "diag": _item_diag,
    "triangle": _item_triangle,
}


def identity_seed(identity: str) -> int:
    return zlib.crc32(identity.encode("utf-8"))


FACE_CELLS = 6


def _face_glyph(identity: str, size: int) -> np.ndarray:
    """Base glyph for ``identity``: a 6x6 block code drawn from a generator
    seeded by the name, centred on the canvas."""
    rng = np.random.default_rng(identity_seed(identity))
    code = (rng.random((FACE_CELLS, FACE_CELLS)) < 0.5).astype(np.float64)
    cell = max(size // FACE_CELLS, 1)
    blocks = np.kron(code, np.ones((cell, cell)))[:size, :size]
    img = np.zeros((size, size))
    off = (size - blocks.shape[0]) // 2
    img[off:off + blocks.shape[0], off:off + blocks.shape[1]] = blocks
    return img


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    out[yd, xd] = img[ys, xs]
    return out


def _finish(base: np.ndarray, rng: np.random.Generator, noise: float, channels: int, jitter: int = 2):
    dy, dx = rng.integers(-jitter, jitter + 1, size=2)
    img = _shift(base, int(dy), int(dx))
    if noise > 0:
        img = img + rng.uniform(-noise, noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    img = np.repeat(img[None], channels, axis=0)
    return np.round(img * 255).astype(np.uint8)


def render_item(kind: str, size: int, rng: np.random.Generator, noise: float = 0.1,
                channels: int = 1) -> np.ndarray:
    """One jittered, noisy sample of an item glyph as uint8 ``(C, H, W)``."""
    try:
        draw = ITEM_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown item kind {kind!r}; known: {sorted(ITEM_KINDS)}") from None
    yy, xx = _grid(size)
    scale = size * rng.uniform(0.28, 0.36)
    return _finish(draw(yy, xx, (size - 1) / 2, scale), rng, noise, channels)


def render_face(identity: str, size: int, rng: np.random.Generator, noise: float = 0.1,
                channels: int = 1, jitter: int = 2) -> np.ndarray:
    """One jittered, noisy sample of an identity's glyph as uint8 ``(C, H, W)``."""
    return _finish(_face_glyph(identity, size), rng, noise, channels, jitter)


# -- datasets ---------------------------------------------------------------

@dataclass
class SyntheticDatasetSpec:
    task: str = "items"  # items or faces
    classes: list[str] = field(default_factory=lambda: ["cross", "disc"])
    size: int = 32
    samples: int = 50
    noise: float = 0.1
    seed: int = 0
    channels: int = 1

    def __post_init__(self):
        if self.task not in ("items", "faces"):
            raise ValueError(f"task must be 'items' or 'faces', got {self.task!r}")
        if len(self.classes) < 2:
            raise ValueError("need at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")
        if any(not c or any(ch.isspace() for ch in c) for c in self.classes):
            raise ValueError("class names must be nonempty and whitespace-free")
        if self.task == "items":
            unknown = [c for c in self.classes if c not in ITEM_KINDS]
            if unknown:
                raise ValueError(f"unknown item kinds {unknown}; known: {sorted(ITEM_KINDS)}")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must be in [0, 1)")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")


def render(task: str, label: str, size: int, rng, noise=0.1, channels=1) -> np.ndarray:
    if task == "items":
        return render_item(label, size, rng, noise, channels)
    return render_face(label, size, rng, noise, channels)


def sample_images(spec: SyntheticDatasetSpec):
    """Render every sample in memory. Returns ``(uint8 images, labels)``,
    class-major order."""
    rng = np.random.default_rng(spec.seed)
    images, labels = [], []
    for ci, name in enumerate(spec.classes):
        for _ in range(spec.samples):
            images.append(render(spec.task, name, spec.size, rng, spec.noise, spec.channels))
            labels.append(ci)
    return np.stack(images), np.array(labels, dtype=np.int64)


def make_dataset(spec: SyntheticDatasetSpec) -> Dataset:
    images, labels = sample_images(spec)
    return Dataset(to_float(images), labels, list(spec.classes))


def generate_dataset(spec: SyntheticDatasetSpec, out_dir) -> list[tuple[str, str]]:
    """Write images under ``out_dir/<class>/`` and a tab-separated manifest.

    Returns the manifest as ``(relative_path, label)`` pairs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    ext = ".pgm" if spec.channels == 1 else ".ppm"
    images, labels = sample_images(spec)
    manifest = []
    for i, (img, li) in enumerate(zip(images, labels)):
        name = spec.classes[li]
        (out / name).mkdir(exist_ok=True)
        rel = f"{name}/{i:05d}{ext}"
        write_pnm(out / rel, img)
        manifest.append((rel, name))
    with open(out / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        for rel, name in manifest:
            fh.write(f"{rel}\t{name}\n")
    return manifest


def read_manifest(data_dir) -> list[tuple[str, str]]:
    rows = []
    with open(Path(data_dir) / MANIFEST, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"manifest line {n}: expected 'path<TAB>label'")
            rows.append((parts[0], parts[1]))
    return rows


def load_dataset(data_dir, classes: list[str] | None = None) -> Dataset:
    """Load a manifest directory. Class order follows first appearance unless
    ``classes`` is given."""
    rows = read_manifest(data_dir)
    if classes is None:
        classes = list(dict.fromkeys(label for _, label in rows))
    index = {c: i for i, c in enumerate(classes)}
    missing = sorted({label for _, label in rows} - set(index))
    if missing:
        raise ValueError(f"labels {missing} not among classes {classes}")
    images = np.stack([read_pnm(Path(data_dir) / rel) for rel, _ in rows])
    labels = np.array([index[label] for _, label in rows], dtype=np.int64)
    return Dataset(to_float(images), labels, list(classes))


def split(data: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded random split into ``(train, test)``."""
    order = np.random.default_rng(seed).permutation(len(data))
    n_test = int(round(len(data) * test_fraction))
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))
