"""Dataset ingestion: MNIST IDX files, PGM folders with a manifest, seeded
per-class subsets, resizing, pixel-corruption noise and synthetic sets."""
from __future__ import annotations

import gzip
import hashlib
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError
from .layers import resize_bilinear
from .rng import Rng

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, 1, H, W), values in [0, 1]
    labels: np.ndarray  # (N,) int64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 1:
            raise DataError(f"images must have shape (N, 1, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataError("pixel values must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(np.unique(self.labels))

    @property
    def hw(self) -> tuple[int, int]:
        return tuple(self.images.shape[2:])

    def fingerprint(self) -> str:
        """sha256 over pixel and label bytes; identifies the exact subset used."""
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.images, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        return h.hexdigest()


# ------------------------------------------------------------------------ IDX

def _read_maybe_gzip(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    data = path.read_bytes()
    return gzip.decompress(data) if data[:2] == b"\x1f\x8b" else data


def parse_idx(image_bytes: bytes, label_bytes: bytes, source: str = "idx") -> LabeledDataset:
    """Decode an IDX image/label pair (big-endian, magics 2051 / 2049)."""
    if len(image_bytes) < 16:
        raise DataError("IDX image file is truncated (header needs 16 bytes)")
    magic, n, rows, cols = struct.unpack(">IIII", image_bytes[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise DataError(f"bad IDX image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}")
    if len(label_bytes) < 8:
        raise DataError("IDX label file is truncated (header needs 8 bytes)")
    lmagic, nl = struct.unpack(">II", label_bytes[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise DataError(f"bad IDX label magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}")
    if n != nl:
        raise DataError(f"count mismatch: {n} images but {nl} labels")
    need = 16 + n * rows * cols
    if len(image_bytes) != need:
        raise DataError(f"IDX image payload has {len(image_bytes) - 16} bytes, expected {need - 16}")
    if len(label_bytes) != 8 + nl:
        raise DataError(f"IDX label payload has {len(label_bytes) - 8} bytes, expected {nl}")
    pixels = np.frombuffer(image_bytes, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8, offset=8)
    return LabeledDataset(pixels / 255.0, labels.astype(np.int64), {"source": source})


def serialize_idx(ds: LabeledDataset) -> tuple[bytes, bytes]:
    n, _, rows, cols = ds.images.shape
    pixels = np.rint(ds.images * 255.0).astype(np.uint8)
    if ds.labels.min(initial=0) < 0 or ds.labels.max(initial=0) > 255:
        raise DataError("IDX labels must fit in an unsigned byte")
    img = struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols) + pixels.tobytes()
    lab = struct.pack(">II", IDX_LABEL_MAGIC, n) + ds.labels.astype(np.uint8).tobytes()
    return img, lab


def load_idx(image_path, label_path) -> LabeledDataset:
    return parse_idx(_read_maybe_gzip(image_path), _read_maybe_gzip(label_path), source=str(image_path))


# ------------------------------------------------------------------------ PGM

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*([^\s#]+)")


def parse_pgm(data: bytes) -> np.ndarray:
    """Binary PGM (P5, maxval <= 255) to an (H, W) float array in [0, 1]."""
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if not m:
            raise DataError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    if tokens[0] != b"P5":
        raise DataError(f"not a binary PGM (P5) file: magic {tokens[0][:8]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise DataError(f"bad PGM header: {exc}") from None
    if not 0 < maxval <= 255:
        raise DataError(f"only 8-bit PGM supported, maxval={maxval}")
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise DataError(f"PGM raster has {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w) / float(maxval)


def encode_pgm(image: np.ndarray) -> bytes:
    """(H, W) array of integers in [0, 255] to P5 bytes."""
    img = np.asarray(image)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + np.clip(img, 0, 255).astype(np.uint8).tobytes()


def load_raw_folder(manifest, resize: tuple[int, int] | None = None) -> LabeledDataset:
    """Load PGM images listed in a manifest of ``path<TAB>label`` lines.

    Paths are relative to the manifest's directory.  All images must share
    one size; ``resize`` is applied afterwards.
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise DataError(f"manifest not found: {manifest}")
    images, labels = [], []
    shape = None
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rsplit("\t", 1) if "\t" in line else line.rsplit(None, 1)
        if len(parts) != 2:
            raise DataError(f"{manifest}:{lineno}: expected '<path>\\t<label>'")
        rel, lab = parts[0].strip(), parts[1].strip()
        try:
            label = int(lab)
        except ValueError:
            raise DataError(f"{manifest}:{lineno}: label {lab!r} is not an integer") from None
        path = manifest.parent / rel
        if not path.is_file():
            raise DataError(f"{manifest}:{lineno}: missing image {path}")
        img = parse_pgm(path.read_bytes())
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise DataError(f"{path}: size {img.shape} differs from {shape} of earlier images")
        images.append(img)
        labels.append(label)
    if not images:
        raise DataError(f"manifest {manifest} lists no images")
    ds = LabeledDataset(np.stack(images)[:, None], np.array(labels), {"source": str(manifest)})
    if resize is not None:
        ds = resize_dataset(ds, *resize)
    return ds


# -------------------------------------------------------------- preparation

def resize_dataset(ds: LabeledDataset, out_h: int, out_w: int) -> LabeledDataset:
    if ds.hw == (out_h, out_w):
        return replace(ds, meta={**ds.meta, "resize": [out_h, out_w]})
    imgs, _ = resize_bilinear(ds.images, out_h, out_w)
    # convex combinations stay in [0, 1] up to round-off
    imgs = np.clip(imgs, 0.0, 1.0)
    return LabeledDataset(imgs, ds.labels.copy(), {**ds.meta, "resize": [out_h, out_w]})


def subset_per_class(ds: LabeledDataset, per_class: int = 100, seed: int = 0) -> LabeledDataset:
    """Seeded uniform choice of ``per_class`` samples from every class.

    Output is ordered by class, then by original index.
    """
    rng = Rng(seed)
    chosen = []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        if len(idx) < per_class:
            raise DataError(f"class {c} has only {len(idx)} samples, {per_class} requested")
        pick = idx[rng.sample(len(idx), per_class)]
        chosen.append(np.sort(pick))
    sel = np.concatenate(chosen)
    return LabeledDataset(ds.images[sel], ds.labels[sel],
                          {**ds.meta, "subset_seed": seed, "per_class": per_class})


def add_noise(ds: LabeledDataset, level: float, seed: int = 0) -> LabeledDataset:
    """Replace ``floor(level * H * W)`` distinct pixels per image with U[0, 1) values."""
    if not 0.0 <= level <= 1.0:
        raise DataError(f"noise level must lie in [0, 1], got {level}")
    n, _, h, w = ds.images.shape
    count = int(np.floor(level * h * w))
    imgs = ds.images.copy()
    if count:
        rng = Rng(seed)
        flat = imgs.reshape(n, h * w)
        for i in range(n):
            pos = rng.sample(h * w, count)
            flat[i, pos] = rng.uniform(count)
    return LabeledDataset(imgs, ds.labels.copy(), {**ds.meta, "noise": level, "noise_seed": seed})


# ---------------------------------------------------------------- synthetic

def orthogonal_subspaces(n_subspaces: int = 3, dim: int = 2, ambient: int = 9, per_subspace: int = 30,
                         seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Unit-norm points from pairwise-orthogonal linear subspaces.

    Returns ``(points, labels)`` with points of shape (n_subspaces * per_subspace, ambient),
    ordered by subspace.
    """
    if n_subspaces * dim > ambient:
        raise ValueError("subspaces do not fit orthogonally in the ambient space")
    rng = Rng(seed)
    Q, _ = np.linalg.qr(rng.normal(ambient * ambient).reshape(ambient, ambient))
    pts, labels = [], []
    for s in range(n_subspaces):
        basis = Q[:, s * dim:(s + 1) * dim]
        coef = rng.normal(per_subspace * dim).reshape(per_subspace, dim)
        p = coef @ basis.T
        pts.append(p / np.linalg.norm(p, axis=1, keepdims=True))
        labels += [s] * per_subspace
    return np.vstack(pts), np.array(labels)


def subspace_images(n_classes: int = 3, per_class: int = 10, size: tuple[int, int] = (12, 12),
                    dim: int = 2, seed: int = 0) -> LabeledDataset:
    """Separable image classes: each class lives in its own horizontal band.

    A class's images are non-negative combinations of ``dim`` smooth random
    patterns supported on that band, scaled into [0, 1].  Bands do not
    overlap, so the classes span mutually orthogonal pixel subspaces.
    """
    h, w = size
    if n_classes > h:
        raise ValueError("more classes than image rows")
    rng = Rng(seed)
    edges = [round(j * h / n_classes) for j in range(n_classes + 1)]
    images, labels = [], []
    for c in range(n_classes):
        patterns = []
        for _ in range(dim):
            pat = np.zeros((h, w))
            band = pat[edges[c]:edges[c + 1]]
            band[:] = rng.uniform(band.size).reshape(band.shape)
            patterns.append(pat)
        for _ in range(per_class):
            coef = 0.2 + 0.8 * rng.uniform(dim)
            img = sum(a * p for a, p in zip(coef, patterns))
            images.append(img / dim)
            labels.append(c)
    return LabeledDataset(np.stack(images)[:, None], np.array(labels),
                          {"source": "synthetic:subspace_images", "seed": seed})
