"""Datasets and file formats.

* IDX files (the big-endian image/label format of the standard digit corpora).
* The two-view noisy-digit construction: view 1 is a randomly rotated digit,
  view 2 a different image of the same class plus uniform noise.
* Synthetic draws from the linear multi-view model, optionally with planted
  clusters in the shared factor.
* ``MVT1`` tensor containers used for datasets, checkpoints and embeddings.

``MVT1`` layout (all integers little-endian)::

    b"MVT1"  u32 record_count
    per record:
        u32 name_length, name (UTF-8)
        u32 rank, rank x u32 dims
        u8  width (4 = float32, 8 = float64)
        payload: prod(dims) floats of that width, C order
"""
from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _kernels

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MVT_MAGIC = b"MVT1"


class FormatError(ValueError):
    pass


@dataclass
class MultiViewBatch:
    views: list[np.ndarray]
    labels: np.ndarray | None = None
    ranges: list[tuple[float, float] | None] = field(default_factory=list)

    def __post_init__(self):
        self.views = [np.asarray(v) for v in self.views]
        if not self.views:
            raise ValueError("a batch needs at least one view")
        n = self.views[0].shape[0]
        for m, v in enumerate(self.views):
            if v.ndim != 2:
                raise ValueError(f"view {m} must be 2-D, got shape {v.shape}")
            if v.shape[0] != n:
                raise ValueError(f"view {m} has {v.shape[0]} rows, expected {n}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise ValueError(f"labels must have shape ({n},), got {self.labels.shape}")
        for m, r in enumerate(self.ranges):
            if r is not None and (self.views[m].min(initial=r[0]) < r[0] or self.views[m].max(initial=r[1]) > r[1]):
                raise ValueError(f"view {m} has values outside {r}")

    @property
    def n(self) -> int:
        return int(self.views[0].shape[0])

    @property
    def M(self) -> int:
        return len(self.views)

    @property
    def dims(self) -> list[int]:
        return [int(v.shape[1]) for v in self.views]

    def subset(self, idx) -> "MultiViewBatch":
        labels = None if self.labels is None else self.labels[idx]
        return MultiViewBatch([v[idx] for v in self.views], labels, list(self.ranges))


# ---------------------------------------------------------------------------
# IDX


def _open(path, mode="rb"):
    path = Path(path)
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def read_idx(path, expect_magic: int | None = None) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if expect_magic is not None and magic != expect_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expect_magic:08x}")
    if magic >> 8 != 0x08:
        raise FormatError(f"{path}: unsupported IDX element type in magic 0x{magic:08x}")
    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{rank}I", raw[4:header])
    count = math.prod(dims)
    if len(raw) - header < count:
        raise FormatError(f"{path}: truncated payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX payloads are supported")
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as fh:
        fh.write(header + np.ascontiguousarray(array).tobytes())


def load_idx(images_path, labels_path) -> MultiViewBatch:
    """Images flattened to rows and scaled to [0, 1]; labels as integers."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected 3 dims, got {images.ndim}")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected 1 dim, got {labels.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    pixels = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return MultiViewBatch([pixels], labels.astype(np.int64), [(0.0, 1.0)])


# ---------------------------------------------------------------------------
# two-view noisy digits


def rotate_image(img, angle: float) -> np.ndarray:
    """Bilinear rotation about the image centre with zero fill, clamped to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if not -math.pi <= angle <= math.pi:
        raise ValueError(f"angle {angle} outside [-pi, pi]")
    return rotate_images(img[None], np.array([angle]))[0]


def rotate_images(images, angles) -> np.ndarray:
    images = np.ascontiguousarray(images, dtype=np.float64)
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    return _kernels.rotate(images, angles)


def _side(d: int) -> int:
    side = math.isqrt(d)
    if side * side != d:
        raise ValueError(f"view width {d} is not a square image")
    return side


def make_two_view(base: MultiViewBatch, seed, pool: MultiViewBatch | None = None) -> MultiViewBatch:
    """Build (rotated digit, noisy same-class digit) pairs from the first view of ``base``.

    View-2 sources are drawn uniformly with replacement among the rows of
    ``pool`` (default ``base``) carrying the same label.
    """
    if base.labels is None:
        raise ValueError("make_two_view needs labels")
    pool = base if pool is None else pool
    if pool.labels is None:
        raise ValueError("the view-2 pool needs labels")
    rng = np.random.default_rng(seed)
    x = np.asarray(base.views[0], dtype=np.float64)
    n, d = x.shape
    side = _side(d)
    angles = rng.uniform(-math.pi / 4, math.pi / 4, size=n)
    view1 = rotate_images(x.reshape(n, side, side), angles).reshape(n, d)

    members = {}
    for c in np.unique(base.labels):
        idx = np.flatnonzero(pool.labels == c)
        if idx.size == 0:
            raise ValueError(f"label class {c} has no members in the view-2 pool")
        members[int(c)] = idx
    src = np.empty(n, dtype=np.int64)
    for i, c in enumerate(base.labels):
        cand = members[int(c)]
        src[i] = cand[rng.integers(cand.size)]
    noise = rng.uniform(0.0, 1.0, size=(n, pool.views[0].shape[1]))
    view2 = np.clip(np.asarray(pool.views[0], dtype=np.float64)[src] + noise, 0.0, 1.0)
    out = MultiViewBatch([view1, view2], base.labels.copy(), [(0.0, 1.0), (0.0, 1.0)])
    out.sources = src
    return out


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class StructuredPhi:
    """Planted clusters: the shared factor of each row is offset by one of ``k`` centroids."""

    model: object
    k: int
    separation: float = 10.0
    seed: int = 0

    def centroids(self) -> np.ndarray:
        """Deterministic in ``seed``, so independently drawn splits share their clusters."""
        d0 = self.model.d0
        if self.k == 1:
            return np.zeros((1, d0))
        if self.k <= d0:
            # pairwise distance exactly `separation`
            return np.eye(d0)[: self.k] * (self.separation / math.sqrt(2.0))
        # rejection sampling; the spread grows slowly while draws keep failing
        rng = np.random.default_rng(self.seed)
        scale = self.separation
        for attempt in range(1, 20001):
            c = rng.standard_normal((self.k, d0)) * scale
            dist = np.linalg.norm(c[:, None] - c[None], axis=2)
            np.fill_diagonal(dist, np.inf)
            if dist.min() >= self.separation:
                return c
            if attempt % 100 == 0:
                scale *= 1.05
        raise RuntimeError("could not place well-separated centroids")


def gen_synthetic(spec, n: int, seed) -> MultiViewBatch:
    from .pcca import LinearPccaModel, sample_generative

    if isinstance(spec, LinearPccaModel):
        spec = StructuredPhi(spec, 1, 0.0)
    if spec.k < 1:
        raise ValueError("need at least one cluster")
    if spec.k > 1 and spec.separation < 6.0:
        raise ValueError("planted clusters need separation >= 6 within-cluster std")
    rng = np.random.default_rng([int(seed), 1])
    centers = spec.centroids()
    labels = rng.integers(spec.k, size=n) if spec.k > 1 else np.zeros(n, dtype=np.int64)
    batch = sample_generative(spec.model, n, seed, phi_offsets=centers[labels])
    batch.labels = labels.astype(np.int64)
    batch.centroids = centers
    return batch


# ---------------------------------------------------------------------------
# MVT1 tensor container


def write_container(path, records: Mapping[str, np.ndarray]) -> None:
    """Write named float tensors; float32 arrays keep 4-byte width, everything else is stored as float64."""
    names = list(records)
    if len(set(names)) != len(names):
        raise ValueError("record names must be unique")
    chunks = [MVT_MAGIC, struct.pack("<I", len(names))]
    for name in names:
        arr = np.asarray(records[name])
        width = 4 if arr.dtype == np.float32 else 8
        arr = np.asarray(arr, dtype="<f4" if width == 4 else "<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(struct.pack("<B", width))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_container(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MVT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    pos = 4

    def take(size):
        nonlocal pos
        if pos + size > len(raw):
            raise FormatError(f"{path}: truncated at byte {pos}")
        out = raw[pos:pos + size]
        pos += size
        return out

    (count,) = struct.unpack("<I", take(4))
    records = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        (width,) = struct.unpack("<B", take(1))
        if width not in (4, 8):
            raise FormatError(f"{path}: record {name!r} has width flag {width}")
        size = math.prod(dims)
        payload = take(size * width)
        dtype = "<f4" if width == 4 else "<f8"
        if name in records:
            raise FormatError(f"{path}: duplicate record {name!r}")
        records[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype[1:], copy=True)
    if pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - pos} trailing bytes")
    return records


def save_batch(path, batch: MultiViewBatch) -> None:
    records = {f"view{m}": np.asarray(v, dtype=np.float64) for m, v in enumerate(batch.views)}
    if batch.labels is not None:
        records["labels"] = batch.labels.astype(np.float64)
    write_container(path, records)


def load_batch(path) -> MultiViewBatch:
    records = read_container(path)
    views = []
    while f"view{len(views)}" in records:
        views.append(records[f"view{len(views)}"].astype(np.float64))
    if not views:
        raise FormatError(f"{path}: no view records")
    labels = records.get("labels")
    return MultiViewBatch(views, None if labels is None else labels.astype(np.int64))


def write_manifest(path, records: Mapping[str, np.ndarray]) -> None:
    """Tab-separated ``name  shape`` lines describing a container's records."""
    lines = [f"{name}\t{'x'.join(map(str, np.shape(a)))}\n" for name, a in records.items()]
    Path(path).write_text("".join(lines))
