"""Dense matrix kernels shared by the model, the solvers and the data tools.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Column ``j`` of
an assignment matrix is one sample's membership vector.
"""
from __future__ import annotations

import math

import numpy as np

# Sub-seed tags. A component's stream is ``default_rng(seed ^ tag)``.
TAG_DATA = 0x0D47A
TAG_PARTITION = 0x9A27
TAG_INIT = 0x1417
TAG_SAMPLING = 0x5A3B
TAG_KMEANS = 0xC1A5


class DimensionError(ValueError):
    """Operand shapes do not conform."""


def make_rng(seed: int, tag: int = 0) -> np.random.Generator:
    """Deterministic generator for one component, derived as ``seed XOR tag``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.default_rng(int(seed) ^ int(tag))


def frob_norm_sq(A: np.ndarray) -> float:
    """Squared Frobenius norm, sum of squared entries."""
    A = np.asarray(A, dtype=np.float64)
    return float(np.vdot(A, A))


def _restart_vectors(n: int):
    yield np.ones(n) / np.sqrt(n)
    alt = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    yield alt / np.linalg.norm(alt)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        yield e


def _power(A: np.ndarray, v: np.ndarray, tol: float, max_iter: int,
           basis: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Power iteration from unit vector ``v``, optionally kept orthogonal to ``basis``."""
    w = A @ v
    if basis is not None:
        w -= basis * (basis @ w)
    lam = float(v @ w)
    for _ in range(max_iter):
        nrm = math.sqrt(float(w @ w))
        if nrm == 0.0:
            break
        v = w / nrm
        w = A @ v
        if basis is not None:
            w -= basis * (basis @ w)
        lam_new = float(v @ w)
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return lam, v


def lambda_max_psd(A: np.ndarray, tol: float = 1e-6, max_iter: int = 1000) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    The iteration starts from the normalized all-ones vector. If that vector
    is (numerically) annihilated by ``A`` it restarts from an alternating-sign
    vector and then from each basis vector in turn; a matrix that annihilates
    all of them is zero and 0.0 is returned.

    A start vector can also be an eigenvector of a smaller eigenvalue (e.g. a
    matrix with equal row sums), in which case plain iteration never leaves
    it. After convergence a second pass therefore runs on the orthogonal
    complement of the converged vector and the larger estimate wins.

    Iteration stops when successive Rayleigh quotients differ by at most
    ``tol`` times the current estimate, or after ``max_iter`` products.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    scale = np.abs(A).max(initial=0.0)
    if scale == 0.0:
        return 0.0
    floor = 1e-13 * scale

    for v in _restart_vectors(n):
        if np.linalg.norm(A @ v) > floor:
            break
    else:
        return 0.0

    lam, v = _power(A, v, tol, max_iter)
    if n > 1:
        u = None
        for cand in _restart_vectors(n):
            cand = cand - v * (v @ cand)
            nrm = math.sqrt(float(cand @ cand))
            if nrm > 1e-6:
                u = cand / nrm
                break
        if u is not None:
            lam2, _ = _power(A, u, tol, max_iter, basis=v)
            lam = max(lam, lam2)
    return max(lam, 0.0)


def project_box(W: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Clamp every entry into ``[lo, hi]``."""
    if lo > hi:
        raise ValueError(f"empty box: lo={lo} > hi={hi}")
    return np.clip(W, lo, hi)


def project_nonneg(H: np.ndarray) -> np.ndarray:
    return np.maximum(H, 0.0)


def project_simplex_columns(H: np.ndarray) -> np.ndarray:
    """Project each column onto the probability simplex (sort-based)."""
    H = np.asarray(H, dtype=np.float64)
    K = H.shape[0]
    srt = -np.sort(-H, axis=0)
    css = np.cumsum(srt, axis=0) - 1.0
    ind = np.arange(1, K + 1)[:, None]
    cond = srt - css / ind > 0
    r = np.count_nonzero(cond, axis=0)
    theta = css[r - 1, np.arange(H.shape[1])] / r
    return np.maximum(H - theta, 0.0)


def sample_without_replacement(P: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random ``m``-subset of ``range(P)`` by partial Fisher-Yates.

    Indices are returned in draw order.
    """
    if P < 1:
        raise ValueError(f"P must be positive, got {P}")
    if not 1 <= m <= P:
        raise ValueError(f"need 1 <= m <= P, got m={m}, P={P}")
    pool = np.arange(P)
    for i in range(m):
        j = int(rng.integers(i, P))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:m].copy()
