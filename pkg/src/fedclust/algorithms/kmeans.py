"""K-means with D^2 (k-means++) seeding and Lloyd iterations.

Samples are the columns of ``X``.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np


class KMeansResult(NamedTuple):
    centroids: np.ndarray  # M x K
    labels: np.ndarray
    cost: float
    history: list[float]


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """K x N matrix of squared distances between centroids and samples."""
    xx = np.einsum("ij,ij->j", X, X)
    cc = np.einsum("ij,ij->j", C, C)
    D = cc[:, None] - 2.0 * (C.T @ X) + xx[None, :]
    return np.maximum(D, 0.0)


def _cost(X: np.ndarray, C: np.ndarray, labels: np.ndarray) -> float:
    R = X - C[:, labels]
    return float(np.einsum("ij,ij->", R, R))


def seed_plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = X.shape[1]
    idx = [int(rng.integers(N))]
    d2 = _sq_dists(X, X[:, idx])[0]
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            # every sample coincides with a chosen center
            j = int(rng.integers(N))
        else:
            j = int(rng.choice(N, p=d2 / total))
        idx.append(j)
        d2 = np.minimum(d2, _sq_dists(X, X[:, [j]])[0])
    return X[:, idx].copy()


def lloyd(X: np.ndarray, C: np.ndarray, max_iters: int = 300) -> KMeansResult:
    K = C.shape[1]
    C = C.copy()
    labels = np.argmin(_sq_dists(X, C), axis=0)
    history = [_cost(X, C, labels)]
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=K)
        for k in range(K):
            if counts[k]:
                C[:, k] = X[:, labels == k].mean(axis=1)
        for k in np.flatnonzero(counts == 0):
            # reseed from the farthest member of the largest cluster
            big = int(np.argmax(counts))
            members = np.flatnonzero(labels == big)
            far = members[np.argmax(((X[:, members] - C[:, [big]]) ** 2).sum(axis=0))]
            C[:, k] = X[:, far]
            labels[far] = k
            counts[big] -= 1
            counts[k] = 1
        new = np.argmin(_sq_dists(X, C), axis=0)
        history.append(_cost(X, C, labels))
        if np.array_equal(new, labels):
            break
        labels = new
        history.append(_cost(X, C, labels))
    return KMeansResult(C, labels, history[-1], history)


def run_kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator,
                 max_iters: int = 300) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations to an assignment fixpoint.

    ``cost`` is the within-cluster sum of squares; ``history`` records it after
    every assignment and every centroid update, so it is nonincreasing.
    """
    X = np.asarray(X, dtype=np.float64)
    if not 1 <= K <= X.shape[1]:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={X.shape[1]}")
    return lloyd(X, seed_plusplus(X, K, rng), max_iters)
