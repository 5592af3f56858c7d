"""Encoder-state embeddings: extraction, Ward clustering and 2-D projection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .seq2seq import Seq2SeqModel, encoder_forward

__all__ = [
    "EmbeddingVector",
    "ClusterModel",
    "extract_embeddings",
    "ward_linkage",
    "cut_linkage",
    "ward_cluster",
    "silhouette",
    "select_k",
    "project_2d",
    "pca",
]


@dataclass
class EmbeddingVector:
    vector: np.ndarray
    source: str
    offset: int = 0
    group: str = "auxiliary"


@dataclass
class ClusterModel:
    """``assignments`` are labels ``0..k-1`` numbered by first appearance.

    ``merges`` holds ``(a, b, cost)`` with cluster ids in the scipy
    convention: ``0..n-1`` are points, ``n + i`` the cluster formed by
    merge ``i``. ``cost`` is the increase in within-cluster sum of squares.
    """

    k: int
    assignments: np.ndarray
    merges: list = field(default_factory=list)


def extract_embeddings(model: Seq2SeqModel, excerpts, batch_size=512) -> np.ndarray:
    """Encoder hidden state ``h`` for each excerpt, dropout off; shape ``(n, n_h)``.

    Excerpts of equal length are batched; mixed lengths are handled one
    length group at a time.
    """
    seqs = [np.asarray(getattr(e, "indices", e), dtype=np.int64) for e in excerpts]
    out = np.empty((len(seqs), model.n_h))
    by_len = {}
    for i, s in enumerate(seqs):
        if s.size and (s.min() < 0 or s.max() >= model.m):
            raise ValueError(f"excerpt {i} has bin indices outside [0, {model.m})")
        by_len.setdefault(s.size, []).append(i)
    for _, idx in sorted(by_len.items()):
        for s in range(0, len(idx), batch_size):
            chunk = idx[s:s + batch_size]
            h, _ = encoder_forward(model, np.stack([seqs[i] for i in chunk]))
            out[chunk] = h
    return out


def ward_linkage(vectors):
    """Full Ward agglomeration via the Lance-Williams update.

    Returns the list of ``(a, b, cost)`` merges; ties go to the lowest
    (row, column) pair of active clusters in index order.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    D = 0.5 * squareform(pdist(X, "sqeuclidean"))
    np.fill_diagonal(D, np.inf)
    size = np.ones(n)
    label = np.arange(n)
    active = np.ones(n, dtype=bool)
    merges = []
    for step in range(n - 1):
        flat = np.argmin(D)
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        cost = D[i, j]
        merges.append((int(min(label[i], label[j])), int(max(label[i], label[j])), float(cost)))
        ni, nj = size[i], size[j]
        nk = size
        new = ((ni + nk) * D[i] + (nj + nk) * D[j] - nk * cost) / (ni + nj + nk)
        new[~active] = np.inf
        D[i], D[:, i] = new, new
        D[i, i] = np.inf
        D[j], D[:, j] = np.inf, np.inf
        active[j] = False
        size[i] = ni + nj
        label[i] = n + step
    return merges


def cut_linkage(merges, n, k):
    """Cluster labels after applying the first ``n - k`` merges."""
    parent = list(range(2 * n - 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for step, (a, b, _) in enumerate(merges[: n - k]):
        parent[find(a)] = n + step
        parent[find(b)] = n + step
    roots = [find(i) for i in range(n)]
    relabel = {}
    return np.array([relabel.setdefault(r, len(relabel)) for r in roots])


def ward_cluster(vectors, k) -> ClusterModel:
    """Ward agglomerative clustering stopped at ``k`` clusters."""
    X = np.asarray(vectors, dtype=float)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of vectors ({n})")
    merges = ward_linkage(X)
    return ClusterModel(k, cut_linkage(merges, n, k), merges[: n - k])


def silhouette(vectors, assignments) -> float:
    """Mean silhouette with Euclidean distances; singleton clusters score 0 and 0/0 counts as 0."""
    X = np.asarray(vectors, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    lab = np.asarray(assignments)
    clusters = np.unique(lab)
    if clusters.size < 2:
        raise ValueError("silhouette needs at least two clusters")
    D = cdist(X, X)
    onehot = (lab[:, None] == clusters[None, :]).astype(float)
    counts = onehot.sum(axis=0)
    sums = D @ onehot
    own = np.searchsorted(clusters, lab)
    n_own = counts[own]
    a = np.where(n_own > 1, sums[np.arange(len(lab)), own] / np.maximum(n_own - 1, 1), 0.0)
    means = sums / counts
    means[np.arange(len(lab)), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((n_own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.mean(s))


def select_k(vectors, k_min=5, k_max=50):
    """Ward cut with the largest silhouette for ``k`` in ``[k_min, k_max]``.

    Returns ``(k, ClusterModel, scores)`` where ``scores`` maps each ``k``
    to its silhouette; ties favour the smallest ``k``.
    """
    X = np.asarray(vectors, dtype=float)
    n = X.shape[0]
    if k_min < 2 or k_max < k_min:
        raise ValueError("need 2 <= k_min <= k_max")
    if k_max > n:
        raise ValueError(f"k_max={k_max} exceeds the number of vectors ({n})")
    merges = ward_linkage(X)
    scores = {}
    best = None
    for k in range(k_min, k_max + 1):
        lab = cut_linkage(merges, n, k)
        s = silhouette(X, lab) if np.unique(lab).size >= 2 else -1.0
        scores[k] = s
        if best is None or s > scores[best]:
            best = k
    return best, ClusterModel(best, cut_linkage(merges, n, best), merges[: n - best]), scores


def pca(vectors):
    """Centred data's principal directions and eigenvalues (descending).

    Eigenvalues are sums of squares along each direction, so they add up
    to the total sum of squares about the mean.
    """
    X = np.asarray(vectors, dtype=float)
    Xc = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    return Vt, s ** 2, X.mean(axis=0)


def project_2d(vectors) -> np.ndarray:
    """Coordinates on the top two principal directions (signs fixed so the largest loading is positive)."""
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two vectors")
    Vt, ev, mu = pca(X)
    if np.all(ev <= 0):
        return np.zeros((X.shape[0], 2))
    Vt = Vt[:2]
    signs = np.sign(Vt[np.arange(Vt.shape[0]), np.argmax(np.abs(Vt), axis=1)])
    Vt = Vt * np.where(signs == 0, 1.0, signs)[:, None]
    coords = (X - mu) @ Vt.T
    if coords.shape[1] < 2:
        coords = np.column_stack([coords, np.zeros(X.shape[0])])
    return coords
