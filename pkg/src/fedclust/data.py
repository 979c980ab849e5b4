"""Synthetic data, federated partitioners and matrix file I/O.

Binary matrix format (little-endian)::

    b"FMC1" | u32 M | u32 N | u8 has_labels | f64[M*N] column-major | u32[N] labels

The CSV variant starts with the line ``M,N,has_labels``, followed by M
rows of N values (row-major), then one row of N integer labels if present.
"""
from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .algorithms.kmeans import run_kmeanspp
from .linalg import TAG_DATA, make_rng
from .model import DataShard, HConstraint, Problem

MAGIC = b"FMC1"
_HEAD = struct.Struct("<4sIIB")
MAX_ENTRIES = 2**31 - 1


class MatrixFileError(ValueError):
    pass


class FormatError(MatrixFileError):
    """Bad magic, malformed header, or trailing garbage."""


class DimensionOverflowError(MatrixFileError):
    """Header dimensions exceed what the format supports."""


class TruncatedPayloadError(MatrixFileError):
    """The file ends before the payload the header announces."""


class Scheme(str, enum.Enum):
    UNIFORM_IID = "uniform_iid"
    SIMILARITY_KMEANS = "similarity_kmeans"
    TWO_CLASS_POWER_LAW = "two_class_power_law"
    TWO_CLASS_BALANCED = "two_class_balanced"


@dataclass
class SyntheticSpec:
    M: int
    N: int
    K: int
    snr_db: float = -3.0
    seed: int = 0

    def violations(self) -> list[str]:
        out = []
        if min(self.M, self.N, self.K) < 1:
            out.append("synthetic dimensions must be positive")
        elif self.K > min(self.M, self.N):
            out.append(f"K={self.K} exceeds min(M, N)")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            out.append("snr_db must be finite or +inf")
        return out


@dataclass
class PartitionSpec:
    scheme: Scheme = Scheme.UNIFORM_IID
    P: int = 10
    power_law_exponent: float = 1.0

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)


class SyntheticData(NamedTuple):
    X: np.ndarray
    labels: np.ndarray
    W_true: np.ndarray


def gen_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """``X = W H + E`` with W ~ U[0,1], one-hot H and Gaussian noise at an exact SNR.

    ``snr_db = inf`` gives noiseless data.
    """
    bad = spec.violations()
    if bad:
        raise ValueError("; ".join(bad))
    rng = make_rng(spec.seed, TAG_DATA)
    W = rng.uniform(0.0, 1.0, size=(spec.M, spec.K))
    labels = rng.integers(0, spec.K, size=spec.N)
    signal = W[:, labels]
    if spec.snr_db == math.inf:
        return SyntheticData(signal, labels, W)
    E = rng.standard_normal((spec.M, spec.N))
    target = np.vdot(signal, signal) * 10.0 ** (-spec.snr_db / 10.0)
    E *= math.sqrt(target / np.vdot(E, E))
    return SyntheticData(signal + E, labels, W)


def _fill_empty(groups: np.ndarray, X: np.ndarray, P: int) -> np.ndarray:
    groups = groups.copy()
    while True:
        counts = np.bincount(groups, minlength=P)
        empty = np.flatnonzero(counts == 0)
        if not empty.size:
            return groups
        big = int(np.argmax(counts))
        members = np.flatnonzero(groups == big)
        centre = X[:, members].mean(axis=1, keepdims=True)
        far = members[np.argmax(((X[:, members] - centre) ** 2).sum(axis=0))]
        groups[far] = empty[0]


def _largest_remainder(total: int, weights: np.ndarray, minimum: int = 0) -> np.ndarray:
    n = len(weights)
    base = np.full(n, minimum, dtype=np.int64)
    rest = total - base.sum()
    if rest < 0:
        raise ValueError(f"cannot give {n} parts at least {minimum} of {total}")
    raw = rest * weights / weights.sum()
    out = base + np.floor(raw).astype(np.int64)
    short = total - out.sum()
    order = np.argsort(-(raw - np.floor(raw)), kind="stable")
    out[order[:short]] += 1
    return out


def power_law_sizes(N: int, P: int, alpha: float) -> np.ndarray:
    """Client sizes proportional to rank^-alpha, at least 2 each, summing to N."""
    if N < 2 * P:
        raise ValueError(f"need at least 2 samples per client, got N={N}, P={P}")
    w = np.arange(1, P + 1, dtype=np.float64) ** (-alpha)
    return _largest_remainder(N, w, minimum=2)


def _two_class(labels: np.ndarray, P: int, targets: np.ndarray,
               rng: np.random.Generator) -> list[np.ndarray]:
    classes = np.unique(labels)
    C = len(classes)
    if C < 2:
        raise ValueError("two-class partition needs at least two classes")
    if 2 * P < C:
        raise ValueError(f"{P} clients cannot cover {C} classes with two classes each")
    # client p takes classes seq[2p], seq[2p+1] of the cyclic class sequence
    pairs = [(classes[(2 * p) % C], classes[(2 * p + 1) % C]) for p in range(P)]
    parts: list[list[np.ndarray]] = [[] for _ in range(P)]
    for k in classes:
        holders = [p for p, pr in enumerate(pairs) if k in pr]
        idx = rng.permutation(np.flatnonzero(labels == k))
        if len(idx) < len(holders):
            raise ValueError(f"class {k} has fewer samples than clients holding it")
        shares = _largest_remainder(len(idx), targets[holders].astype(np.float64), minimum=1)
        start = 0
        for p, n in zip(holders, shares):
            parts[p].append(idx[start:start + n])
            start += n
    return [np.concatenate(pp) for pp in parts]


def partition_indices(X: np.ndarray, labels: Optional[np.ndarray], spec: PartitionSpec,
                      rng: np.random.Generator) -> list[np.ndarray]:
    N = X.shape[1]
    P = spec.P
    if not 1 <= P <= N:
        raise ValueError(f"need 1 <= P <= N, got P={P}, N={N}")
    if spec.scheme is Scheme.UNIFORM_IID:
        return [np.asarray(a) for a in np.array_split(rng.permutation(N), P)]
    if spec.scheme is Scheme.SIMILARITY_KMEANS:
        groups = _fill_empty(run_kmeanspp(X, P, rng).labels, X, P)
        return [np.flatnonzero(groups == p) for p in range(P)]
    if labels is None:
        raise ValueError(f"{spec.scheme.value} partition needs labels")
    if spec.scheme is Scheme.TWO_CLASS_BALANCED:
        targets = np.full(P, N / P)
    else:
        targets = power_law_sizes(N, P, spec.power_law_exponent).astype(np.float64)
    return _two_class(np.asarray(labels), P, targets, rng)


def shards_from_indices(X: np.ndarray, labels: Optional[np.ndarray],
                        parts: list[np.ndarray]) -> list[DataShard]:
    N = X.shape[1]
    omegas = [len(ix) / N for ix in parts]
    resid = 1.0 - sum(omegas)
    if resid:
        big = int(np.argmax([len(ix) for ix in parts]))
        omegas[big] += resid
    return [DataShard(X[:, ix], w, None if labels is None else np.asarray(labels)[ix])
            for ix, w in zip(parts, omegas)]


def partition(X: np.ndarray, labels: Optional[np.ndarray], spec: PartitionSpec,
              rng: np.random.Generator) -> list[DataShard]:
    """Split the columns of ``X`` over ``spec.P`` clients.

    * uniform_iid: random permutation cut into near-equal pieces.
    * similarity_kmeans: one client per k-means cluster (P clusters).
    * two_class_balanced / two_class_power_law: client ``p`` draws from the
      classes at positions 2p and 2p+1 of the cyclic class order; each class
      is shared among its holders in proportion to their target sizes
      (equal, or rank^-alpha), so realized sizes follow the targets up to
      class availability.
    """
    X = np.asarray(X, dtype=np.float64)
    return shards_from_indices(X, labels, partition_indices(X, labels, spec, rng))


def build_problem(X: np.ndarray, labels: Optional[np.ndarray], K: int, spec: PartitionSpec,
                  rng: np.random.Generator, rho: float = 1e-8, nu: float = 1e-10,
                  h_constraint: HConstraint = HConstraint.NONNEG) -> Problem:
    """Partition ``X`` and wrap it as a problem with the box [min X, max X]."""
    shards = partition(X, labels, spec, rng)
    return Problem(shards, K, rho, nu, float(X.min()), float(X.max()), h_constraint)


# ---------------------------------------------------------------- file I/O

def save_matrix(path, X: np.ndarray, labels: Optional[np.ndarray] = None) -> None:
    path = Path(path)
    X = np.asarray(X, dtype=np.float64)
    M, N = X.shape
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (N,):
            raise ValueError("labels must have one entry per column")
        if labels.size and (labels.min() < 0 or labels.max() > 0xFFFFFFFF):
            raise ValueError("labels must fit in u32")
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([M, N, int(labels is not None)])
            for row in X:
                w.writerow([repr(float(v)) for v in row])
            if labels is not None:
                w.writerow([int(v) for v in labels])
        return
    with path.open("wb") as fh:
        fh.write(_HEAD.pack(MAGIC, M, N, int(labels is not None)))
        fh.write(X.astype("<f8").tobytes(order="F"))
        if labels is not None:
            fh.write(labels.astype("<u4").tobytes())


def load_matrix(path) -> tuple[np.ndarray, Optional[np.ndarray]]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    buf = path.read_bytes()
    if len(buf) < _HEAD.size:
        raise FormatError(f"{path}: file shorter than the {_HEAD.size}-byte header")
    magic, M, N, has_labels = _HEAD.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if has_labels not in (0, 1):
        raise FormatError(f"{path}: has_labels flag must be 0 or 1, got {has_labels}")
    if M == 0 or N == 0:
        raise FormatError(f"{path}: empty matrix {M}x{N}")
    if M * N > MAX_ENTRIES:
        raise DimensionOverflowError(f"{path}: {M}x{N} exceeds {MAX_ENTRIES} entries")
    need = _HEAD.size + 8 * M * N + (4 * N if has_labels else 0)
    if len(buf) < need:
        raise TruncatedPayloadError(f"{path}: {len(buf)} bytes, header announces {need}")
    if len(buf) > need:
        raise FormatError(f"{path}: {len(buf) - need} trailing bytes")
    X = np.frombuffer(buf, dtype="<f8", count=M * N, offset=_HEAD.size)
    X = X.reshape((M, N), order="F").astype(np.float64)
    labels = None
    if has_labels:
        labels = np.frombuffer(buf, dtype="<u4", count=N,
                               offset=_HEAD.size + 8 * M * N).astype(np.int64)
    return X, labels


def _load_csv(path: Path) -> tuple[np.ndarray, Optional[np.ndarray]]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    try:
        M, N, has_labels = (int(v) for v in rows[0])
    except ValueError:
        raise FormatError(f"{path}: header must be 'M,N,has_labels'") from None
    if has_labels not in (0, 1) or M < 1 or N < 1:
        raise FormatError(f"{path}: invalid header {rows[0]}")
    if M * N > MAX_ENTRIES:
        raise DimensionOverflowError(f"{path}: {M}x{N} exceeds {MAX_ENTRIES} entries")
    body = rows[1:]
    if len(body) < M + has_labels:
        raise TruncatedPayloadError(f"{path}: {len(body)} data rows, expected {M + has_labels}")
    if len(body) > M + has_labels:
        raise FormatError(f"{path}: unexpected extra rows")
    if any(len(r) != N for r in body):
        raise FormatError(f"{path}: every row must have {N} values")
    X = np.array([[float(v) for v in r] for r in body[:M]], dtype=np.float64)
    labels = np.array([int(v) for v in body[M]], dtype=np.int64) if has_labels else None
    return X, labels
