"""SLIC-style superpixels, region geometry, feature pooling and member sampling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .cube import HsiCube, _load_u32_grid, _save_u32_grid

SEG_MAGIC = b"HSSEG001"
SLIC_ITERATIONS = 10
_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class Segmentation:
    assignment: np.ndarray  # (height, width) int64 ids in [0, N)

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        ids = np.unique(self.assignment)
        if ids[0] != 0 or ids[-1] != len(ids) - 1:
            raise ValueError("superpixel ids must cover [0, N) without gaps")

    @property
    def height(self) -> int:
        return self.assignment.shape[0]

    @property
    def width(self) -> int:
        return self.assignment.shape[1]

    @property
    def N(self) -> int:
        return int(self.assignment.max()) + 1

    def members(self) -> list[np.ndarray]:
        """Flat pixel indices of every superpixel, ascending."""
        flat = self.assignment.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.cumsum(np.bincount(flat, minlength=self.N))[:-1]
        return np.split(order, bounds)

    def areas(self) -> np.ndarray:
        return np.bincount(self.assignment.ravel(), minlength=self.N)


@dataclass
class GeomFeatures:
    area: int
    perimeter: int
    aspect_ratio: float
    centroid: tuple[float, float]

    def as_vector(self) -> np.ndarray:
        return np.array([self.area, self.perimeter, self.aspect_ratio, *self.centroid], dtype=float)


# --------------------------------------------------------------------------- SLIC

def _grid_shape(h: int, w: int, n: int) -> tuple[int, int]:
    ny = max(1, min(h, int(round(np.sqrt(n * h / w)))))
    nx = max(1, min(w, int(round(n / ny))))
    return ny, nx


def _relabel(assignment: np.ndarray) -> np.ndarray:
    """Renumber ids to [0, N) in raster order of first appearance."""
    flat = assignment.ravel()
    _, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty_like(first)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    return rank[inverse].reshape(assignment.shape)


def enforce_connectivity(assignment: np.ndarray, spectra: np.ndarray | None = None) -> np.ndarray:
    """Merge every non-largest component of a label into an adjacent superpixel.

    The receiving superpixel is the one whose mean spectrum is closest to the orphan's
    (``spectra`` is (H*W, bands)); ties, or no spectra at all, fall back to the
    largest adjacent superpixel.
    """
    a = _relabel(assignment)
    while True:
        comps = np.zeros_like(a)
        n_comp = 0
        comp_label = []
        for lab in range(int(a.max()) + 1):
            lc, k = ndimage.label(a == lab, structure=_FOUR)
            mask = lc > 0
            comps[mask] = lc[mask] + n_comp
            comp_label.extend([lab] * k)
            n_comp += k
        comp_label = np.array(comp_label)
        comp_size = np.bincount(comps.ravel(), minlength=n_comp + 1)[1:]
        orphans = []
        for lab in np.unique(comp_label):
            ids = np.flatnonzero(comp_label == lab)
            if len(ids) > 1:
                keep = ids[np.argmax(comp_size[ids])]
                orphans.extend(i for i in ids if i != keep)
        if not orphans:
            return _relabel(a)
        # smallest orphan first, ties by component number (raster order of discovery)
        target = min(orphans, key=lambda i: (comp_size[i], i))
        mask = comps == target + 1
        ring = ndimage.binary_dilation(mask, structure=_FOUR) & ~mask
        neighbours = np.unique(a[ring])
        neighbours = neighbours[neighbours != comp_label[target]]
        if len(neighbours) == 0:
            return _relabel(a)
        areas = np.bincount(a.ravel(), minlength=int(a.max()) + 1)
        if spectra is None:
            dist = np.zeros(len(neighbours))
        else:
            flat = a.ravel()
            mine = spectra[mask.ravel()].mean(axis=0)
            dist = np.array([((spectra[flat == n].mean(axis=0) - mine) ** 2).sum()
                             for n in neighbours])
        best = neighbours[np.lexsort((neighbours, -areas[neighbours], dist))[0]]
        a[mask] = best
        a = _relabel(a)


def slic_segment(cube: HsiCube, n_target: int, compactness: float = 10.0,
                 seed: int = 0) -> Segmentation:
    """k-means in (spectrum, s*y, s*x) space with s = compactness / sqrt(H*W/n_target).

    Centres start on a regular grid, so the result does not depend on ``seed``; the
    argument is kept so every stage of the pipeline shares one calling convention.
    """
    h, w = cube.height, cube.width
    if n_target < 1 or n_target > h * w:
        raise ValueError(f"n_target={n_target} outside [1, {h * w}]")
    if n_target == 1:
        return Segmentation(np.zeros((h, w), dtype=np.int64))
    step = np.sqrt(h * w / n_target)
    scale = compactness / step
    ny, nx = _grid_shape(h, w, n_target)
    cy = (np.arange(ny) + 0.5) * h / ny - 0.5
    cx = (np.arange(nx) + 0.5) * w / nx - 0.5
    yy, xx = np.meshgrid(cy, cx, indexing="ij")
    spec = cube.pixels().astype(np.float64)
    py, px = np.divmod(np.arange(h * w), w)
    pos = np.stack([py, px], axis=1).astype(np.float64)

    cpos = np.stack([yy.ravel(), xx.ravel()], axis=1)
    nearest = np.clip(np.rint(cpos).astype(int), 0, [h - 1, w - 1])
    cspec = spec[nearest[:, 0] * w + nearest[:, 1]]
    window = 2.0 * step
    for _ in range(SLIC_ITERATIONS):
        d_spec = ((spec[:, None, :] - cspec[None]) ** 2).sum(-1)
        d_pos = ((pos[:, None, :] - cpos[None]) ** 2).sum(-1)
        dist = d_spec + scale ** 2 * d_pos
        outside = (np.abs(pos[:, None, 0] - cpos[None, :, 0]) > window) | \
                  (np.abs(pos[:, None, 1] - cpos[None, :, 1]) > window)
        dist = np.where(outside & ~outside.all(axis=1, keepdims=True), np.inf, dist)
        labels = np.argmin(dist, axis=1)
        counts = np.bincount(labels, minlength=len(cpos))
        live = counts > 0
        for c in np.flatnonzero(live):
            sel = labels == c
            cspec[c] = spec[sel].mean(axis=0)
            cpos[c] = pos[sel].mean(axis=0)
    return Segmentation(enforce_connectivity(labels.reshape(h, w), spec))


# ----------------------------------------------------------------------- geometry

def superpixel_geometry(seg: Segmentation, sp_id: int) -> GeomFeatures:
    if not 0 <= sp_id < seg.N:
        raise ValueError(f"superpixel id {sp_id} outside [0, {seg.N})")
    mask = seg.assignment == sp_id
    ys, xs = np.nonzero(mask)
    padded = np.pad(mask, 1, constant_values=False)
    inner = padded[1:-1, 1:-1]
    perimeter = 0
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = padded[1 + dy:padded.shape[0] - 1 + dy, 1 + dx:padded.shape[1] - 1 + dx]
        perimeter += int(np.count_nonzero(inner & ~nb))
    bbox_h = ys.max() - ys.min() + 1
    bbox_w = xs.max() - xs.min() + 1
    return GeomFeatures(area=int(mask.sum()), perimeter=perimeter,
                        aspect_ratio=float(bbox_w / bbox_h),
                        centroid=(float(ys.mean()), float(xs.mean())))


def all_geometry(seg: Segmentation) -> list[GeomFeatures]:
    return [superpixel_geometry(seg, i) for i in range(seg.N)]


# ---------------------------------------------------------------- pooling / fusion

def pooling_matrix(seg: Segmentation) -> np.ndarray:
    """(N, H*W) matrix whose product with pixel features gives member means."""
    flat = seg.assignment.ravel()
    P = np.zeros((seg.N, flat.size))
    P[flat, np.arange(flat.size)] = 1.0
    return P / P.sum(axis=1, keepdims=True)


def pool_features(pixel_features: np.ndarray, seg: Segmentation) -> np.ndarray:
    """Superpixel feature = mean of its member pixel features."""
    F = np.asarray(pixel_features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] != seg.height * seg.width:
        raise ValueError(f"expected {seg.height * seg.width} pixel rows, got {F.shape}")
    out = np.zeros((seg.N, F.shape[1]))
    for n, idx in enumerate(seg.members()):
        out[n] = F[idx].sum(axis=0) / len(idx)
    return out


def geometry_columns(geoms: list[GeomFeatures]) -> np.ndarray:
    """Per-attribute z-scores plus a trailing zero column, shape (N, 6)."""
    raw = np.array([g.as_vector() for g in geoms], dtype=float).reshape(len(geoms), 5)
    mu = raw.mean(axis=0)
    sd = raw.std(axis=0)
    z = np.where(sd < 1e-12, 0.0, (raw - mu) / np.where(sd < 1e-12, 1.0, sd))
    return np.hstack([z, np.zeros((len(geoms), 1))])


def fuse_attributes(pooled: np.ndarray, geoms: list[GeomFeatures], weight: float = 1.0) -> np.ndarray:
    """Append standardized [area, perimeter, aspect, cy, cx, 0] to each pooled row.

    ``weight`` scales the appended block relative to the deep features.
    """
    pooled = np.asarray(pooled, dtype=np.float64)
    if len(geoms) != pooled.shape[0]:
        raise ValueError(f"{len(geoms)} geometries for {pooled.shape[0]} superpixels")
    return np.hstack([pooled, weight * geometry_columns(geoms)])


# ------------------------------------------------------------------------ sampling

def sample_pixels(seg: Segmentation, M: int, seed: int) -> list[np.ndarray]:
    """min(M, area) distinct members per superpixel, drawn uniformly, sorted ascending."""
    if M < 1:
        raise ValueError("M must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for idx in seg.members():
        if len(idx) <= M:
            out.append(idx.copy())
        else:
            out.append(np.sort(rng.choice(idx, size=M, replace=False)))
    return out


# -------------------------------------------------------------------------- export

def save_segmentation(seg: Segmentation, path) -> None:
    _save_u32_grid(SEG_MAGIC, seg.assignment, seg.N, path)


def load_segmentation(path) -> Segmentation:
    grid, _ = _load_u32_grid(SEG_MAGIC, path)
    return Segmentation(grid.astype(np.int64))


def write_pgm(seg: Segmentation, path) -> None:
    header = b"P5\n%d %d\n255\n" % (seg.width, seg.height)
    Path(path).write_bytes(header + (seg.assignment % 256).astype(np.uint8).tobytes())

