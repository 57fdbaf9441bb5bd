"""Deterministic numerical kernels shared by all metrics.

All entropies use natural log. Variances and standard deviations use the
population (1/n) convention so that closed-form oracles agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import adjusted_mutual_info_score


class DegenerateSeriesError(ValueError):
    """Raised when a correlation input has zero variance."""


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_clusters):
            raise ValueError("cluster labels out of range")
        object.__setattr__(self, "labels", labels)


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats of a probability vector, with 0*log 0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < -1e-7):
        raise ValueError("negative probability beyond tolerance")
    s = p.sum()
    if abs(s - 1.0) > 1e-5:
        raise ValueError("probability vector does not sum to 1")
    p = np.clip(p, 0.0, None)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def row_entropies(P: np.ndarray) -> np.ndarray:
    """Entropy of each row of a row-stochastic matrix (no per-row validation)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.clip(P, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(Q > 0, np.log(np.where(Q > 0, Q, 1.0)), 0.0)
    return -np.sum(Q * logs, axis=1)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def pearson_corr(s: np.ndarray, a: np.ndarray) -> float:
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if s.shape != a.shape or s.ndim != 1:
        raise ValueError("inputs must be 1-D vectors of equal length")
    if s.size < 2:
        raise ValueError("need at least 2 points")
    ds = s - s.mean()
    da = a - a.mean()
    ss = np.sqrt(np.mean(ds * ds))
    sa = np.sqrt(np.mean(da * da))
    if ss <= 0 or sa <= 0:
        raise DegenerateSeriesError("degenerate series")
    return float(np.clip(np.mean(ds * da) / (ss * sa), -1.0, 1.0))


def nuclear_norm(P: np.ndarray) -> float:
    """Sum of singular values of P, via full SVD."""
    P = np.asarray(P, dtype=np.float64)
    if not np.all(np.isfinite(P)):
        raise ValueError("non-finite entries")
    return float(np.linalg.svd(P, compute_uv=False).sum())


def canonical_order(F: np.ndarray) -> np.ndarray:
    """Indices sorting rows of F lexicographically.

    Used to make k-means and fold seeding independent of sample order.
    """
    F = np.asarray(F)
    return np.lexsort(F.T[::-1])


def kmeans(F: np.ndarray, k: int, seed: int) -> ClusterAssignment:
    """Lloyd's algorithm with seeded k-means++ init, <= 300 iterations.

    Rows are canonically ordered first, so the result does not depend on the
    sample order of F. Empty clusters are refilled with the point farthest
    from its centroid.
    """
    F = np.asarray(F, dtype=np.float64)
    n = F.shape[0]
    if k > n:
        raise ValueError("k exceeds number of points")
    if k < 1:
        raise ValueError("k must be >= 1")
    order = canonical_order(F)
    X = F[order]
    rng = np.random.default_rng(seed)

    # k-means++ seeding
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = X[rng.integers(n)]
        else:
            centers[j] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(300):
        dists = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for j in range(k):
            mask = new_labels == j
            if mask.any():
                centers[j] = X[mask].mean(axis=0)
            else:
                worst = np.argmax(dists[np.arange(n), new_labels])
                centers[j] = X[worst]
                new_labels[worst] = j
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    out = np.empty(n, dtype=np.int64)
    out[order] = labels
    return ClusterAssignment(labels=out, n_clusters=k)


def adjusted_mutual_information(u: ClusterAssignment, v: ClusterAssignment) -> float:
    """AMI under the permutation model with the arithmetic-mean normalizer.

    Returns 0.0 whenever either partition is a single cluster.
    """
    lu = np.asarray(u.labels)
    lv = np.asarray(v.labels)
    if lu.shape != lv.shape:
        raise ValueError("length mismatch")
    if len(np.unique(lu)) < 2 or len(np.unique(lv)) < 2:
        return 0.0
    return float(adjusted_mutual_info_score(lu, lv, average_method="arithmetic"))


def standardize(w: np.ndarray) -> np.ndarray:
    """(w - mean)/std + 1 with population std; all-ones when std <= 1e-12."""
    w = np.asarray(w, dtype=np.float64)
    if w.size < 2:
        raise ValueError("need at least 2 values")
    sd = np.sqrt(np.mean((w - w.mean()) ** 2))
    if sd <= 1e-12:
        return np.ones_like(w)
    return (w - w.mean()) / sd + 1.0
