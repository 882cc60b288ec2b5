"""Contrastive and pseudo-label losses.

Similarity is cosine throughout: rows are L2-normalised before dot products, so
already-normalised encoder output passes through unchanged. All functions accept
numpy arrays or ``Tensor`` objects and return a scalar ``Tensor``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, as_tensor, concat, l2_normalize, log_softmax, logsumexp

LOG_EPS = 1e-12


@dataclass
class ContrastConfig:
    tau: float = 0.5
    k_neighbors: int = 3
    M: int = 10
    lam: float = 10.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


def _check_tau(tau: float) -> None:
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < LOG_EPS or nb < LOG_EPS:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def similarity_matrix(A, B) -> Tensor:
    return l2_normalize(as_tensor(A)) @ l2_normalize(as_tensor(B)).T


def info_nce(anchor, positive, negatives, tau: float) -> Tensor:
    """-log softmax share of the positive among {positive} + negatives."""
    _check_tau(tau)
    if len(negatives) < 1:
        raise ValueError("info_nce needs at least one negative")
    rows = [as_tensor(positive).reshape(1, -1)] + [as_tensor(n).reshape(1, -1) for n in negatives]
    logits = similarity_matrix(as_tensor(anchor).reshape(1, -1), concat(rows, axis=0)) * (1.0 / tau)
    return logsumexp(logits, axis=1).sum() - logits[0, 0]


def knn_positives(H, k: int) -> np.ndarray:
    """(N, k) ids of each row's k most cosine-similar other rows; ties go to the lower id."""
    H = H.value if isinstance(H, Tensor) else np.asarray(H, dtype=np.float64)
    N = H.shape[0]
    if not 1 <= k < N:
        raise ValueError(f"k={k} must satisfy 1 <= k < N={N}")
    S = similarity_matrix(H, H).value
    np.fill_diagonal(S, -np.inf)
    order = np.argsort(-S, axis=1, kind="stable")
    return order[:, :k]


def superpixel_contrastive_loss(H, neighbors: np.ndarray, tau: float) -> Tensor:
    """Mean over anchors of summed -log p(j | i) for j in the kNN set, p over all t != i."""
    _check_tau(tau)
    H = as_tensor(H)
    neighbors = np.asarray(neighbors)
    N = H.shape[0]
    if neighbors.ndim != 2 or neighbors.shape[0] != N or neighbors.shape[1] == 0:
        raise ValueError("neighbor sets must be a non-empty (N, k) array")
    logits = similarity_matrix(H, H) * (1.0 / tau)
    lse = logsumexp(logits, axis=1, mask=~np.eye(N, dtype=bool))
    rows = np.repeat(np.arange(N), neighbors.shape[1])
    pos = logits[rows, neighbors.ravel()]
    return (lse[rows] - pos).sum() * (1.0 / N)


def pixel_contrastive_loss(H, sampled, tau: float, owner: np.ndarray | None = None) -> Tensor:
    """Superpixel-to-pixel contrast.

    ``sampled`` is either a list with one (m_n, d) block of sampled pixel features per
    superpixel, or all sampled rows stacked together with ``owner[t]`` naming the
    superpixel row t was drawn from. For superpixel n the numerator sums over its own
    samples and the denominator over every sample.
    """
    if owner is None:
        blocks = [as_tensor(b) for b in sampled]
        if any(b.shape[0] == 0 for b in blocks):
            raise ValueError("every superpixel needs at least one sampled pixel")
        owner = np.repeat(np.arange(len(blocks)), [b.shape[0] for b in blocks])
        sampled = concat(blocks, axis=0)
    _check_tau(tau)
    H = as_tensor(H)
    owner = np.asarray(owner)
    N = H.shape[0]
    counts = np.bincount(owner, minlength=N)
    if len(counts) > N or np.any(counts[:N] == 0):
        raise ValueError("every superpixel needs at least one sampled pixel")
    logits = similarity_matrix(H, sampled) * (1.0 / tau)
    own = owner[None, :] == np.arange(N)[:, None]
    per_anchor = logsumexp(logits, axis=1) - logsumexp(logits, axis=1, mask=own)
    return per_anchor.sum() * (1.0 / N)


def combined_contrastive(loss_s, loss_p) -> Tensor:
    return as_tensor(loss_s) + as_tensor(loss_p)


def _check_simplex(P: np.ndarray, what: str) -> None:
    if P.ndim != 2 or np.any(P < -1e-6) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError(f"{what} rows must lie on the probability simplex")


def plc_loss(pseudo, predicted) -> Tensor:
    """Mean cross-entropy between fixed pseudo-labels and predicted soft labels."""
    pseudo = pseudo.value if isinstance(pseudo, Tensor) else np.asarray(pseudo, dtype=np.float64)
    predicted = as_tensor(predicted)
    _check_simplex(pseudo, "pseudo-label")
    _check_simplex(predicted.value, "prediction")
    if pseudo.shape != predicted.shape:
        raise ValueError(f"shape mismatch {pseudo.shape} vs {predicted.shape}")
    ce = -((predicted + LOG_EPS).log() * pseudo).sum()
    return ce * (1.0 / pseudo.shape[0])


def soft_assign_tensor(H, centroids: np.ndarray, temp: float = 1.0) -> Tensor:
    """Differentiable soft k-means labels: softmax over -||H_i - mu_c||^2 / temp."""
    if temp <= 0:
        raise ValueError("temp must be > 0")
    H = as_tensor(H)
    C = np.asarray(centroids, dtype=np.float64)
    d2 = (H * H).sum(axis=1, keepdims=True) - (H @ C.T) * 2.0 + (C * C).sum(axis=1)[None, :]
    return log_softmax(d2 * (-1.0 / temp)).exp()


def total_loss(loss_c, loss_plc, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return as_tensor(loss_c) + as_tensor(loss_plc) * lam
