"""Clustering scores: matched overall accuracy, NMI and Cohen's kappa."""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cube import UNLABELED


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} vs {truth.size}")
    keep = (truth != UNLABELED) & (pred != UNLABELED)
    pred, truth = pred[keep], truth[keep]
    if pred.size == 0:
        raise ValueError("no labelled samples to score")
    return pred, truth


def confusion_matrix(truth, pred) -> np.ndarray:
    """Square count matrix, rows truth ids and columns predicted ids, zero padded."""
    t = np.unique(truth, return_inverse=True)[1]
    p = np.unique(pred, return_inverse=True)[1]
    k = max(t.max(), p.max()) + 1
    C = np.zeros((k, k), dtype=np.int64)
    np.add.at(C, (t, p), 1)
    return C


def match_labels(pred, truth) -> np.ndarray:
    """Relabel ``pred`` into truth's id space using the Hungarian matching."""
    pred, truth = np.asarray(pred, np.int64).ravel(), np.asarray(truth, np.int64).ravel()
    t_ids, t_inv = np.unique(truth, return_inverse=True)
    p_ids, p_inv = np.unique(pred, return_inverse=True)
    k = max(len(t_ids), len(p_ids))
    C = np.zeros((k, k), dtype=np.int64)
    np.add.at(C, (t_inv, p_inv), 1)
    rows, cols = linear_sum_assignment(C, maximize=True)
    # predicted clusters matched to padding rows get fresh ids that match nothing
    fresh = iter(range(int(t_ids.max()) + 1, int(t_ids.max()) + 1 + k))
    target = np.empty(k, dtype=np.int64)
    for r, c in zip(rows, cols):
        target[c] = t_ids[r] if r < len(t_ids) else next(fresh)
    return target[p_inv]


def overall_accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    C = confusion_matrix(truth, pred)
    rows, cols = linear_sum_assignment(C, maximize=True)
    return float(C[rows, cols].sum() / pred.size)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """I(pred; truth) / sqrt(H(pred) H(truth)), natural logs."""
    pred, truth = _pair(pred, truth)
    C = confusion_matrix(truth, pred).astype(float)
    h_t, h_p = _entropy(C.sum(1)), _entropy(C.sum(0))
    if h_t == 0 and h_p == 0:
        return 1.0
    if h_t == 0 or h_p == 0:
        return 0.0
    nonzero = C > 0
    if np.all(nonzero.sum(0) <= 1) and np.all(nonzero.sum(1) <= 1):
        return 1.0  # same partition up to relabelling; skip the rounding in I / H
    n = C.sum()
    joint = C / n
    outer = np.outer(C.sum(1), C.sum(0)) / n ** 2
    nz = joint > 0
    mi = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    return float(max(0.0, mi / np.sqrt(h_t * h_p)))


def kappa(pred_matched, truth) -> float:
    """Cohen's kappa for predictions already expressed in truth's label space."""
    pred, truth = _pair(pred_matched, truth)
    ids = np.union1d(pred, truth)
    t = np.searchsorted(ids, truth)
    p = np.searchsorted(ids, pred)
    n = pred.size
    p_o = float(np.count_nonzero(t == p) / n)
    p_e = float((np.bincount(t, minlength=len(ids)) * np.bincount(p, minlength=len(ids))).sum() / n ** 2)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else 0.0
    return (p_o - p_e) / (1.0 - p_e)


def evaluate(pred, truth) -> dict[str, float]:
    """OA, NMI and kappa (after Hungarian matching) over labelled pixels."""
    pred, truth = _pair(pred, truth)
    matched = match_labels(pred, truth)
    return {"OA": overall_accuracy(pred, truth), "NMI": nmi(pred, truth),
            "Kappa": kappa(matched, truth)}
