"""From a coefficient matrix to cluster labels: affinity, normalised spectral
clustering, k-means and the clustering-error score."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assignment import hungarian
from .eigen import sym_eigen
from .rng import Rng

ZERO_DEGREE_LOOP = 1e-12
KMEANS_MAX_ITER = 300


@dataclass
class ClusteringResult:
    labels: np.ndarray
    error_percent: float
    affinity: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)


def build_affinity(C, keep_fraction: float = 1.0) -> np.ndarray:
    """Symmetric non-negative affinity with zero diagonal from coefficients ``C``.

    ``W = (|C| + |C^T|) / 2`` with the diagonal zeroed.  Each row then keeps
    its largest entries up to the first one at which the cumulative mass
    reaches ``keep_fraction`` of the row total; the rest are zeroed and the
    result is re-symmetrised.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"C must be square, got shape {C.shape}")
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    A = np.abs(C)
    W = 0.5 * (A + A.T)
    np.fill_diagonal(W, 0.0)
    if not np.any(W):
        raise ValueError("degenerate coefficients: affinity is all zero")
    if keep_fraction < 1.0:
        out = np.zeros_like(W)
        for i, row in enumerate(W):
            total = row.sum()
            if total == 0.0:
                continue
            order = np.argsort(-row, kind="stable")
            csum = np.cumsum(row[order])
            keep = min(int(np.searchsorted(csum, keep_fraction * total)) + 1, len(row))
            out[i, order[:keep]] = row[order[:keep]]
        W = 0.5 * (out + out.T)
    return W


def kmeans(points, k: int, seed: int = 0, restarts: int = 20):
    """k-means with k-means++ seeding and deterministic restarts.

    Restart ``r`` uses the ``r``-th output of ``Rng(seed)`` as its own seed.
    The run with the lowest within-cluster sum of squares wins; ties go to
    the lower restart index.

    Returns
    -------
    labels : ndarray of int, shape (N,)
    wcss : float
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    seeds = Rng(seed).u64(max(restarts, 1))
    best_labels, best_wcss = None, np.inf
    for r in range(max(restarts, 1)):
        labels, wcss = _lloyd(X, k, Rng(int(seeds[r])))
        if wcss < best_wcss:
            best_labels, best_wcss = labels, wcss
    return best_labels, float(best_wcss)


def _sq_dists(X, centers):
    d = (X * X).sum(1)[:, None] - 2.0 * X @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plusplus(X, k, rng: Rng):
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.below(n)]
    closest = ((X - centers[0]) ** 2).sum(1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.below(n)
        else:
            cdf = np.cumsum(closest)
            idx = int(np.searchsorted(cdf, rng.uniform(1)[0] * cdf[-1], side="right"))
            idx = min(idx, n - 1)
        centers[c] = X[idx]
        closest = np.minimum(closest, ((X - centers[c]) ** 2).sum(1))
    return centers


def _lloyd(X, k, rng: Rng):
    centers = _plusplus(X, k, rng)
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        d = _sq_dists(X, centers)
        new = d.argmin(axis=1)
        new = _repair_empty(X, new, k, centers)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centers[c] = X[labels == c].mean(axis=0)
    wcss = float(sum(((X[labels == c] - centers[c]) ** 2).sum() for c in range(k)))
    return labels, wcss


def _repair_empty(X, labels, k, centers):
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        # steal the point farthest from its own centroid, from a cluster that can spare one
        dist = ((X - centers[labels]) ** 2).sum(1)
        dist[counts[labels] <= 1] = -1.0
        i = int(dist.argmax())
        counts[labels[i]] -= 1
        labels[i] = c
        counts[c] += 1
    return labels


def spectral_embedding(W, k: int, laplacian: str = "sym") -> np.ndarray:
    """Rows of the ``k`` eigenvectors of the normalised Laplacian with smallest eigenvalues."""
    W = np.array(W, dtype=np.float64)
    n = len(W)
    deg = W.sum(axis=1)
    zero = deg <= 0.0
    W[zero, zero] = ZERO_DEGREE_LOOP
    deg = W.sum(axis=1)
    if laplacian == "sym":
        inv = 1.0 / np.sqrt(deg)
        Lap = np.eye(n) - inv[:, None] * W * inv[None, :]
    elif laplacian == "unnormalized":
        Lap = np.diag(deg) - W
    else:
        raise ValueError(f"unknown laplacian {laplacian!r}")
    Lap = 0.5 * (Lap + Lap.T)
    _, V = sym_eigen(Lap)
    U = V[:, :k].copy()
    if laplacian == "sym":
        norms = np.linalg.norm(U, axis=1)
        ok = norms > 1e-12
        U[ok] /= norms[ok, None]
        U[~ok] = 0.0
    return U


def spectral_clustering(W, k: int, seed: int = 0, restarts: int = 20, laplacian: str = "sym") -> np.ndarray:
    """Normalised spectral clustering (symmetric Laplacian, row-normalised embedding, k-means)."""
    n = len(W)
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples {n}")
    if k < 1:
        raise ValueError("k must be positive")
    U = spectral_embedding(W, k, laplacian)
    labels, _ = kmeans(U, k, seed=seed, restarts=restarts)
    return labels


def clustering_error(pred, truth) -> float:
    """Percentage of samples misassigned under the best one-to-one label matching."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"label arrays differ in shape: {pred.shape} vs {truth.shape}")
    n = len(pred)
    if n == 0:
        return 0.0
    _, p = np.unique(pred, return_inverse=True)
    _, t = np.unique(truth, return_inverse=True)
    k = max(p.max(), t.max()) + 1
    confusion = np.zeros((k, k))
    np.add.at(confusion, (p, t), 1.0)
    assign, total = hungarian(-confusion)
    matched = -total
    return 100.0 * (1.0 - matched / n)
