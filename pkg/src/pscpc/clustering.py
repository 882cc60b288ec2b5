"""k-means, soft labels, cluster alignment and superpixel pseudo-labels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .superpixel import Segmentation


@dataclass
class KMeansResult:
    centroids: np.ndarray
    hard: np.ndarray
    inertia: float
    n_iter: int = 0


@dataclass
class ClusterAlignment:
    permutation: np.ndarray  # permutation[a] = matching id in the second labelling
    agreement: int

    def apply(self, labels) -> np.ndarray:
        return self.permutation[np.asarray(labels)]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def kmeans_plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    idx = [int(rng.integers(n))]
    d2 = ((X - X[idx[0]]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # every point coincides with a centre; take the first unused index
            nxt = next(i for i in range(n) if i not in idx)
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(1))
    return X[idx].copy()


def _lloyd(X: np.ndarray, C: np.ndarray, max_iter: int, tol: float) -> KMeansResult:
    K = C.shape[0]
    prev_inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        D = _sq_dists(X, C)
        hard = np.argmin(D, axis=1)
        # empty clusters are re-seeded at the point farthest from its own centroid
        for c in range(K):
            if not np.any(hard == c):
                own = D[np.arange(len(X)), hard]
                movable = np.bincount(hard, minlength=K)[hard] > 1
                far = int(np.argmax(np.where(movable, own, -1.0)))
                C[c] = X[far]
                hard[far] = c
                D[:, c] = ((X - C[c]) ** 2).sum(1)
        inertia = float(D[np.arange(len(X)), hard].sum())
        assert inertia <= prev_inertia * (1 + 1e-12) + 1e-12, "k-means inertia increased"
        prev_inertia = inertia
        new_C = np.stack([X[hard == c].mean(axis=0) for c in range(K)])
        shift = np.sqrt(((new_C - C) ** 2).sum(1)).max()
        C = new_C
        if shift < tol:
            break
    D = _sq_dists(X, C)
    hard = np.argmin(D, axis=1)
    return KMeansResult(C, hard, float(D[np.arange(len(X)), hard].sum()), it)


def _hartigan(X: np.ndarray, res: KMeansResult, max_pass: int = 100) -> KMeansResult:
    """Single-point moves that lower the inertia, applied after Lloyd has converged.

    Moving x from cluster a to b changes the inertia by n_b/(n_b+1) d_b - n_a/(n_a-1) d_a.
    Its fixed points are a subset of Lloyd's, which removes many poor local optima.
    """
    K = res.centroids.shape[0]
    hard = res.hard.copy()
    counts = np.bincount(hard, minlength=K).astype(np.float64)
    if np.any(counts == 0):
        return res
    C = np.stack([X[hard == c].mean(axis=0) for c in range(K)])
    for _ in range(max_pass):
        # screen every point at once, then walk the candidates with live centroids
        D = _sq_dists(X, C)
        own = D[np.arange(len(X)), hard]
        n_own = counts[hard]
        stay = np.where(n_own > 1, n_own / np.maximum(n_own - 1, 1) * own, np.inf)
        cost = counts / (counts + 1) * D
        cost[np.arange(len(X)), hard] = np.inf
        candidates = np.flatnonzero(cost.min(axis=1) < stay * (1 - 1e-12))
        moved = False
        for i in candidates:
            a = hard[i]
            if counts[a] <= 1:
                continue
            d = ((X[i] - C) ** 2).sum(axis=1)
            c_i = counts / (counts + 1) * d
            c_i[a] = np.inf
            b = int(np.argmin(c_i))
            if c_i[b] < counts[a] / (counts[a] - 1) * d[a] * (1 - 1e-12):
                C[a] = (C[a] * counts[a] - X[i]) / (counts[a] - 1)
                C[b] = (C[b] * counts[b] + X[i]) / (counts[b] + 1)
                counts[a] -= 1
                counts[b] += 1
                hard[i] = b
                moved = True
        if not moved:
            break
    C = np.stack([X[hard == c].mean(axis=0) for c in range(K)])
    inertia = float(((X - C[hard]) ** 2).sum())
    assert inertia <= res.inertia * (1 + 1e-12) + 1e-12, "refinement increased inertia"
    return KMeansResult(C, hard, inertia, res.n_iter)


def kmeans(features, K: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
           n_init: int = 5) -> KMeansResult:
    """k-means++ seeded Lloyd iterations plus Hartigan refinement; best of ``n_init`` restarts."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] < K:
        raise ValueError(f"{X.shape[0]} rows cannot form {K} clusters")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        res = _hartigan(X, _lloyd(X, kmeans_plusplus(X, K, rng), max_iter, tol))
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def soft_assign(features, centroids, temp: float = 1.0) -> np.ndarray:
    """Row-stochastic soft labels proportional to exp(-||x - mu_c||^2 / temp)."""
    if temp <= 0:
        raise ValueError("temp must be > 0")
    logits = -_sq_dists(np.asarray(features, float), np.asarray(centroids, float)) / temp
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def cooccurrence(labels_a, labels_b, K: int) -> np.ndarray:
    a = np.asarray(labels_a, dtype=np.int64)
    b = np.asarray(labels_b, dtype=np.int64)
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (a, b), 1)
    return C


def align_clusters(labels_a, labels_b, K: int) -> ClusterAlignment:
    """Bijection a -> b maximising the number of entities labelled consistently."""
    if len(labels_a) != len(labels_b):
        raise ValueError(f"length mismatch: {len(labels_a)} vs {len(labels_b)}")
    C = cooccurrence(labels_a, labels_b, K)
    rows, cols = linear_sum_assignment(C, maximize=True)
    perm = np.empty(K, dtype=np.int64)
    perm[rows] = cols
    return ClusterAlignment(perm, int(C[rows, cols].sum()))


def pixel_pseudo_labels(pixel_hard, owner, n_superpixels: int, K: int,
                        align: ClusterAlignment | None = None) -> np.ndarray:
    """Per-superpixel share of each (aligned) pixel cluster among its sampled pixels.

    ``pixel_hard[t]`` is the cluster of sampled pixel t and ``owner[t]`` its superpixel.
    """
    ids = np.asarray(pixel_hard, dtype=np.int64)
    if align is not None:
        ids = align.apply(ids)
    owner = np.asarray(owner, dtype=np.int64)
    counts = np.zeros((n_superpixels, K))
    np.add.at(counts, (owner, ids), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise ValueError("superpixel without sampled pixels")
    return counts / totals


def sampled_owner(samples: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Flatten per-superpixel sample lists into (pixel index, owning superpixel)."""
    idx = np.concatenate(samples)
    owner = np.repeat(np.arange(len(samples)), [len(s) for s in samples])
    return idx, owner


def pseudo_labels_for_segmentation(pixel_hard, samples: list[np.ndarray], seg: Segmentation,
                                   align: ClusterAlignment | None, K: int) -> np.ndarray:
    _, owner = sampled_owner(samples)
    return pixel_pseudo_labels(pixel_hard, owner, seg.N, K, align)


def clean_sample_flags(superpixel_hard, pseudo, align: ClusterAlignment | None = None) -> np.ndarray:
    """True where a superpixel's cluster equals the dominant cluster of its pixels.

    ``pseudo`` is expected in the superpixel-cluster index space; pass ``align`` when its
    columns are still pixel-cluster ids.
    """
    P = np.asarray(pseudo, dtype=np.float64)
    if align is not None:
        aligned = np.zeros_like(P)
        aligned[:, align.permutation] = P
        P = aligned
    return np.argmax(P, axis=1) == np.asarray(superpixel_hard)
