"""Clustering, classification and agreement metrics on learned representations."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import _kernels, numkit

MAX_ITER = 300
REL_TOL = 1e-7
SPECTRAL_CAP = 4000


@dataclass
class ClusteringResult:
    assignments: np.ndarray
    inertia: float
    k: int
    centers: np.ndarray | None = None


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be an N x d matrix")
    return np.ascontiguousarray(x)


def _plus_plus(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(x, centers):
    k = centers.shape[0]
    prev = math.inf
    for _ in range(MAX_ITER):
        labels, dist = _kernels.assign(x, centers)
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed an empty cluster at the point farthest from its centre
            far = int(np.argmax(dist))
            centers[j] = x[far]
            labels[far] = j
            dist[far] = 0.0
            counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        centers = sums / counts[:, None]
        labels, dist = _kernels.assign(x, centers)
        inertia = float(dist.sum())
        if prev - inertia <= REL_TOL * max(inertia, 1e-300):
            break
        prev = inertia
    return labels, inertia, centers


def kmeans(points, k: int, seed=0, restarts: int = 10) -> ClusteringResult:
    """k-means++ seeding followed by Lloyd iterations; the best of ``restarts`` runs is kept."""
    x = _points(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, inertia, centers = _lloyd(x, _plus_plus(x, k, rng))
        if best is None or inertia < best.inertia:
            best = ClusteringResult(labels, inertia, k, centers)
    return best


def knn_graph(points, knn: int) -> np.ndarray:
    """Symmetrised 0/1 adjacency of the ``knn`` nearest neighbours (ties broken by index)."""
    x = _points(points)
    n = x.shape[0]
    if knn < 1:
        raise ValueError("knn must be >= 1")
    knn = min(knn, n - 1)
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, np.inf)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :knn]
    adj = np.zeros((n, n))
    adj[np.repeat(np.arange(n), knn), nbrs.ravel()] = 1.0
    return np.maximum(adj, adj.T)


def _components(adj) -> int:
    n = adj.shape[0]
    seen = np.zeros(n, dtype=bool)
    count = 0
    for s in range(n):
        if seen[s]:
            continue
        count += 1
        stack = [s]
        seen[s] = True
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i] > 0):
                if not seen[j]:
                    seen[j] = True
                    stack.append(j)
    return count


def spectral_cluster(points, k: int, knn: int = 10, seed=0, restarts: int = 10) -> ClusteringResult:
    """Normalised spectral clustering on the symmetrised k-NN graph.

    Above ``SPECTRAL_CAP`` points this falls back to :func:`kmeans` with a
    warning.  The reported inertia is that of the k-means step in the
    spectral embedding.
    """
    x = _points(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= N, got k={k}, N={n}")
    if n > SPECTRAL_CAP:
        warnings.warn(f"{n} points exceed the spectral cap of {SPECTRAL_CAP}; using k-means", stacklevel=2)
        return kmeans(x, k, seed, restarts)
    adj = knn_graph(x, knn)
    ncomp = _components(adj)
    if ncomp > 1:
        warnings.warn(f"k-NN graph has {ncomp} connected components", stacklevel=2)
    deg = adj.sum(axis=1)
    inv = 1.0 / np.sqrt(np.maximum(deg, 1e-300))
    lap = np.eye(n) - inv[:, None] * adj * inv[None, :]
    lap = 0.5 * (lap + lap.T)
    _, vecs = numkit.sym_eig(lap)
    emb = vecs[:, ::-1][:, :k]
    emb = emb / np.maximum(np.linalg.norm(emb, axis=1, keepdims=True), 1e-300)
    return kmeans(emb, k, seed, restarts)


# ---------------------------------------------------------------------------
# metrics


def _pair(labels, assignments):
    a = np.asarray(labels).ravel()
    b = np.asarray(assignments).ravel()
    if a.size == 0:
        raise ValueError("empty input")
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} labels vs {b.size} assignments")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    return table


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(labels, assignments) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    table = _pair(labels, assignments)
    n = table.sum()
    ha = _entropy(table.sum(axis=1))
    hb = _entropy(table.sum(axis=0))
    if ha == 0.0 and hb == 0.0:
        return 1.0
    nz = table > 0
    outer = np.outer(table.sum(axis=1), table.sum(axis=0))
    mi = float(np.sum(table[nz] / n * np.log(table[nz] * n / outer[nz])))
    return max(0.0, min(1.0, mi / (0.5 * (ha + hb))))


def acc(labels, assignments) -> float:
    """Accuracy under the best one-to-one matching of clusters to labels."""
    table = _pair(labels, assignments)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / table.sum())


def ari(labels, assignments) -> float:
    table = _pair(labels, assignments)
    n = table.sum()
    comb = lambda v: v * (v - 1.0) / 2.0
    index = comb(table).sum()
    sa = comb(table.sum(axis=1)).sum()
    sb = comb(table.sum(axis=0)).sum()
    expected = sa * sb / comb(n) if n > 1 else 0.0
    top = 0.5 * (sa + sb)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))


def knn_classify(train_points, train_labels, test_points, k: int = 1) -> np.ndarray:
    """Majority vote over the ``k`` nearest training points; ties go to the class of the nearest one.

    Neighbours at equal distance are ordered by label, so the result does
    not depend on the order of the training set.
    """
    xtr = _points(train_points)
    ytr = np.asarray(train_labels, dtype=np.int64)
    xte = _points(test_points)
    if xtr.shape[0] == 0:
        raise ValueError("empty training set")
    if k < 1 or k % 2 == 0:
        raise ValueError("k must be a positive odd number")
    if ytr.shape[0] != xtr.shape[0]:
        raise ValueError("train labels and points differ in length")
    k = min(k, xtr.shape[0])
    sq = np.sum(xtr * xtr, axis=1)
    out = np.empty(xte.shape[0], dtype=np.int64)
    for start in range(0, xte.shape[0], 1024):
        block = xte[start:start + 1024]
        d2 = np.maximum(np.sum(block * block, axis=1)[:, None] + sq[None, :] - 2.0 * block @ xtr.T, 0.0)
        for i, row in enumerate(d2):
            order = np.lexsort((ytr, row))[:k]
            votes = np.bincount(ytr[order] - ytr.min())
            top = np.flatnonzero(votes == votes.max()) + ytr.min()
            if top.size == 1:
                out[start + i] = top[0]
            else:
                out[start + i] = next(ytr[j] for j in order if ytr[j] in top)
    return out


def error_rate(truth, predicted) -> float:
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.size == 0 or truth.shape != predicted.shape:
        raise ValueError("need equal-length, non-empty label vectors")
    return float(np.mean(truth != predicted))


def pca(x, d: int, fit_on=None) -> np.ndarray:
    """Project onto the top ``d`` principal directions of ``fit_on`` (default ``x``)."""
    x = _points(x)
    ref = x if fit_on is None else _points(fit_on)
    mu = ref.mean(axis=0)
    cov = (ref - mu).T @ (ref - mu) / ref.shape[0]
    _, vecs = numkit.sym_eig(cov)
    return (x - mu) @ vecs[:, :d]


def report(metrics: dict) -> str:
    """``metric=value`` lines in insertion order."""
    return "".join(f"{k}={v:.9g}\n" if isinstance(v, float) else f"{k}={v}\n" for k, v in metrics.items())
