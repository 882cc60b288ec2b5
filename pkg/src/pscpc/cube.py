"""Hyperspectral cube container, binary I/O, synthetic scenes, PCA and patches."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.ndimage import gaussian_filter

CUBE_MAGIC = b"HSCUBE01"
LABEL_MAGIC = b"HSLAB001"
UNLABELED = 0xFFFFFFFF


class FormatError(ValueError):
    """Bad magic or header in a binary file."""


class TruncationError(FormatError):
    """Payload length disagrees with the header."""


@dataclass
class HsiCube:
    data: np.ndarray  # (height, width, bands)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"cube must be 3-D with non-empty axes, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def pixels(self) -> np.ndarray:
        """(height*width, bands) view in row-major pixel order."""
        return self.data.reshape(-1, self.bands)


@dataclass
class LabelMap:
    labels: np.ndarray  # (height, width) uint32, UNLABELED marks background
    K: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint32)
        if self.labels.ndim != 2:
            raise ValueError("label map must be 2-D")
        valid = self.labels[self.labels != UNLABELED]
        if valid.size and int(valid.max()) >= self.K:
            raise ValueError(f"label {int(valid.max())} out of range for K={self.K}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass
class Patch:
    center: tuple[int, int]
    size: int
    values: np.ndarray  # (size, size, bands)


@dataclass
class SyntheticSpec:
    height: int = 32
    width: int = 32
    bands: int = 8
    K: int = 4
    spectral_separation: float = 20.0
    noise_sigma: float = 0.0
    blob_scale: float = 6.0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.spectral_separation <= 0:
            raise ValueError("spectral_separation must be > 0")

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        """Parse ``HxWxB:K:sep:sigma[:blob_scale]``, e.g. ``32x32x8:4:20:10``."""
        try:
            dims, k, sep, sigma, *rest = text.split(":")
            if len(rest) > 1:
                raise ValueError(text)
            h, w, b = (int(v) for v in dims.lower().split("x"))
            extra = {"blob_scale": float(rest[0])} if rest else {}
            return cls(h, w, b, int(k), float(sep), float(sigma), **extra)
        except ValueError as exc:
            raise ValueError(
                f"bad synthetic spec {text!r}: expected HxWxB:K:sep:sigma[:blob_scale]") from exc

    def format(self) -> str:
        return (f"{self.height}x{self.width}x{self.bands}:{self.K}:"
                f"{self.spectral_separation:g}:{self.noise_sigma:g}:{self.blob_scale:g}")


# --------------------------------------------------------------------------- I/O

def save_cube(cube: HsiCube, path) -> None:
    header = CUBE_MAGIC + struct.pack("<3I", cube.height, cube.width, cube.bands)
    Path(path).write_bytes(header + np.ascontiguousarray(cube.data, dtype="<f4").tobytes())


def load_cube(path) -> HsiCube:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != CUBE_MAGIC:
        raise FormatError(f"{path}: not an HSC cube file")
    h, w, b = struct.unpack("<3I", raw[8:20])
    if min(h, w, b) < 1:
        raise FormatError(f"{path}: zero dimension in header {h}x{w}x{b}")
    expected = h * w * b * 4
    if len(raw) - 20 != expected:
        raise TruncationError(
            f"{path}: header says {h}x{w}x{b} ({expected} bytes) but payload has {len(raw) - 20}")
    data = np.frombuffer(raw, dtype="<f4", offset=20).reshape(h, w, b).astype(np.float32)
    return HsiCube(data)


def _save_u32_grid(magic: bytes, grid: np.ndarray, third: int, path) -> None:
    h, w = grid.shape
    header = magic + struct.pack("<3I", h, w, third)
    Path(path).write_bytes(header + np.ascontiguousarray(grid, dtype="<u4").tobytes())


def _load_u32_grid(magic: bytes, path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:8] != magic:
        raise FormatError(f"{path}: expected magic {magic!r}")
    h, w, third = struct.unpack("<3I", raw[8:20])
    if len(raw) - 20 != h * w * 4:
        raise TruncationError(f"{path}: header says {h}x{w} but payload has {len(raw) - 20} bytes")
    grid = np.frombuffer(raw, dtype="<u4", offset=20).reshape(h, w).astype(np.uint32)
    return grid, third


def save_labels(labels: LabelMap, path) -> None:
    _save_u32_grid(LABEL_MAGIC, labels.labels, labels.K, path)


def load_labels(path) -> LabelMap:
    grid, K = _load_u32_grid(LABEL_MAGIC, path)
    return LabelMap(grid, K)


# ---------------------------------------------------------------------- synthetic

def _class_means(rng: np.random.Generator, K: int, bands: int, sep: float) -> np.ndarray:
    base = rng.uniform(2.0 * sep, 4.0 * sep, size=bands)
    if K <= bands:
        # orthonormal offsets scaled by sep/sqrt(2) put every pair exactly sep apart
        q, _ = np.linalg.qr(rng.standard_normal((bands, K)))
        offsets = q.T * (sep / np.sqrt(2.0))
    else:
        offsets = rng.standard_normal((K, bands))
        d = np.sqrt(((offsets[:, None] - offsets[None]) ** 2).sum(-1))
        offsets *= sep / d[~np.eye(K, dtype=bool)].min()
    return base + offsets


def _absorb_fragments(labels: np.ndarray, K: int, min_size: int) -> np.ndarray:
    """Merge 4-connected class fragments smaller than ``min_size`` into their commonest neighbour."""
    four = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labels = labels.copy()
    changed = True
    while changed:
        changed = False
        for c in range(K):
            comp, n = ndimage.label(labels == c, structure=four)
            if n <= 1:
                continue
            sizes = np.bincount(comp.ravel(), minlength=n + 1)
            for i in np.argsort(sizes[1:], kind="stable") + 1:
                if sizes[i] >= min_size or i == np.argmax(sizes[1:]) + 1:
                    continue
                mask = comp == i
                ring = ndimage.binary_dilation(mask, structure=four) & ~mask
                nb = np.bincount(labels[ring], minlength=K)
                if nb.sum() == 0:
                    continue
                labels[mask] = int(np.argmax(nb))
                changed = True
            if changed:
                break
    return labels


def _blob_partition(rng: np.random.Generator, h: int, w: int, K: int, scale: float) -> np.ndarray:
    fields = rng.standard_normal((K, h, w))
    if scale > 0:
        fields = np.stack([gaussian_filter(f, scale, mode="reflect") for f in fields])
    fields /= fields.std(axis=(1, 2), keepdims=True) + 1e-12
    # per-class offsets nudged toward equal class shares
    offset = np.zeros((K, 1, 1))
    for _ in range(200):
        share = np.bincount(np.argmax(fields + offset, axis=0).ravel(), minlength=K) / (h * w)
        offset[:, 0, 0] += 0.5 * (1.0 / K - share)
    labels = np.argmax(fields + offset, axis=0)
    labels = _absorb_fragments(labels, K, min_size=int(np.ceil(scale ** 2)))
    # every class gets at least one pixel: seed missing ones at their field's peak
    for c in range(K):
        if not np.any(labels == c):
            counts = np.bincount(labels.ravel(), minlength=K)
            donors = np.flatnonzero(labels.ravel() != c)
            donors = donors[counts[labels.ravel()[donors]] > 1]
            best = donors[np.argmax(fields[c].ravel()[donors])]
            labels.ravel()[best] = c
    return labels


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[HsiCube, LabelMap]:
    """Planted-cluster cube: smooth random blobs, one mean spectrum per class, Gaussian noise."""
    if spec.K > spec.height * spec.width:
        raise ValueError(f"K={spec.K} exceeds pixel count {spec.height * spec.width}")
    rng = np.random.default_rng(seed)
    labels = _blob_partition(rng, spec.height, spec.width, spec.K, spec.blob_scale)
    means = _class_means(rng, spec.K, spec.bands, spec.spectral_separation)
    data = means[labels]
    if spec.noise_sigma > 0:
        data = data + rng.normal(0.0, spec.noise_sigma, size=data.shape)
    return HsiCube(data.astype(np.float32)), LabelMap(labels.astype(np.uint32), spec.K)


# ---------------------------------------------------------------------------- PCA

def pca_components(X: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-d eigenpairs of the sample covariance of X (rows are samples).

    Returns (mean, eigenvalues, eigenvectors) with eigenvectors as columns, ordered by
    descending eigenvalue, each flipped so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(X.shape[0] - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:d]
    vals, vecs = vals[order], vecs[:, order]
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return mean, vals, vecs * signs


def pca_reduce(cube: HsiCube, d: int = 3) -> HsiCube:
    if not 1 <= d <= cube.bands:
        raise ValueError(f"target dimension {d} outside [1, {cube.bands}]")
    n = cube.height * cube.width
    if n < d:
        raise ValueError(f"cube has {n} pixels, need at least {d}")
    X = cube.pixels().astype(np.float64)
    mean, _, vecs = pca_components(X, d)
    scores = (X - mean) @ vecs
    return HsiCube(scores.reshape(cube.height, cube.width, d))


# -------------------------------------------------------------------------- patches

def extract_patch(cube: HsiCube, center: tuple[int, int], size: int = 5) -> Patch:
    if size < 1 or size % 2 == 0:
        raise ValueError(f"patch size must be a positive odd integer, got {size}")
    y, x = center
    if not (0 <= y < cube.height and 0 <= x < cube.width):
        raise ValueError(f"center {center} outside {cube.height}x{cube.width} cube")
    r = size // 2
    ys = np.clip(np.arange(y - r, y + r + 1), 0, cube.height - 1)
    xs = np.clip(np.arange(x - r, x + r + 1), 0, cube.width - 1)
    return Patch((y, x), size, cube.data[np.ix_(ys, xs)].copy())


def extract_all_patches(cube: HsiCube, size: int = 5) -> np.ndarray:
    """Flattened edge-replicated patches for every pixel, shape (H*W, size*size*bands)."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"patch size must be a positive odd integer, got {size}")
    r = size // 2
    padded = np.pad(cube.data, ((r, r), (r, r), (0, 0)), mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (size, size), axis=(0, 1))
    # sliding_window_view puts window axes last: (H, W, bands, size, size)
    win = np.moveaxis(win, 2, -1)
    return win.reshape(cube.height * cube.width, -1).astype(np.float64)
