"""Distributed matrix-factorization clustering objective.

For client ``p`` holding ``X_p`` (M x N_p) the local cost is::

    F_p(W, H_p) = ||X_p - W H_p||_F^2 / N_p + R_H(H_p) / w_p

with ``w_p = N_p / N`` and the orthogonality-promoting regularizer::

    R_H(H_p) = rho/2 * sum_j [(1^T h_j)^2 - ||h_j||^2] + nu/2 * ||H_p||_F^2

The global objective is ``F = sum_p w_p F_p``. ``R_W`` is identically zero.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .linalg import (
    DimensionError,
    frob_norm_sq,
    lambda_max_psd,
    project_box,
    project_nonneg,
    project_simplex_columns,
)


class HConstraint(str, enum.Enum):
    NONNEG = "nonneg"
    SIMPLEX = "simplex"


class HStepRule(str, enum.Enum):
    PRACTICAL = "practical"  # c = 1/2 lambda_max(W^T W)
    THEOREM = "theorem"  # c = gamma/2 * L_H


class WStepRule(str, enum.Enum):
    PRACTICAL_AVG = "practical_avg"  # d = lambda_max(H H^T)
    PRACTICAL_GDS = "practical_gds"  # d = 1/2 lambda_max(H H^T)
    DIMINISHING = "diminishing"  # d = (s + 1) L_W
    CONSTANT = "constant"  # d = gamma L_W
    HALF_GAMMA = "half_gamma"  # d = gamma/2 L_W


@dataclass
class DataShard:
    """One client's block of columns."""

    X: np.ndarray
    omega: float
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[1] < 1:
            raise ValueError(f"shard needs at least one sample, got shape {self.X.shape}")
        if not 0.0 < self.omega <= 1.0:
            raise ValueError(f"shard weight must lie in (0, 1], got {self.omega}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.X.shape[1],):
                raise DimensionError("labels length must equal the shard's sample count")

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]


@dataclass
class FactorState:
    W: np.ndarray
    H: list[np.ndarray]

    def copy(self) -> "FactorState":
        return FactorState(self.W.copy(), [h.copy() for h in self.H])


@dataclass
class Problem:
    shards: list[DataShard]
    K: int
    rho: float = 1e-8
    nu: float = 1e-10
    w_lo: float = 0.0
    w_hi: float = 1.0
    h_constraint: HConstraint = HConstraint.NONNEG
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.shards:
            raise ValueError("problem needs at least one shard")
        if self.rho < 0 or self.nu < 0:
            raise ValueError("penalties rho and nu must be non-negative")
        if self.w_lo > self.w_hi:
            raise ValueError("w_lo must not exceed w_hi")
        self.h_constraint = HConstraint(self.h_constraint)
        M = self.shards[0].X.shape[0]
        if any(s.X.shape[0] != M for s in self.shards):
            raise DimensionError("all shards must share the feature dimension")
        total = sum(s.omega for s in self.shards)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"shard weights must sum to 1, got {total!r}")

    @classmethod
    def from_shards(cls, blocks: Sequence[np.ndarray], K: int, labels=None, *,
                    auto_box: bool = True, **kwargs) -> "Problem":
        """Build a problem from raw column blocks, weighting each by N_p / N.

        With ``auto_box`` the centroid box is [min X, max X].
        """
        blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
        N = sum(b.shape[1] for b in blocks)
        if labels is None:
            labels = [None] * len(blocks)
        shards = [DataShard(b, b.shape[1] / N, lab) for b, lab in zip(blocks, labels)]
        # Exact-sum guard: fold the rounding residue into the largest shard.
        resid = 1.0 - sum(s.omega for s in shards)
        if resid != 0.0:
            big = max(range(len(shards)), key=lambda i: shards[i].n_samples)
            shards[big].omega += resid
        if auto_box and "w_lo" not in kwargs and "w_hi" not in kwargs:
            kwargs["w_lo"] = min(float(b.min()) for b in blocks)
            kwargs["w_hi"] = max(float(b.max()) for b in blocks)
        return cls(shards=shards, K=K, **kwargs)

    @property
    def M(self) -> int:
        return self.shards[0].X.shape[0]

    @property
    def N(self) -> int:
        return sum(s.n_samples for s in self.shards)

    @property
    def P(self) -> int:
        return len(self.shards)

    @property
    def has_labels(self) -> bool:
        return all(s.labels is not None for s in self.shards)

    def project_W(self, W: np.ndarray) -> np.ndarray:
        return project_box(W, self.w_lo, self.w_hi)

    def project_H(self, H: np.ndarray) -> np.ndarray:
        if self.h_constraint is HConstraint.SIMPLEX:
            return project_simplex_columns(H)
        return project_nonneg(H)

    def with_rho(self, rho: float) -> "Problem":
        return Problem(self.shards, self.K, rho, self.nu, self.w_lo, self.w_hi,
                       self.h_constraint, dict(self.meta))

    def centralized(self) -> "Problem":
        """Single-shard problem over the concatenated data, same penalties and box."""
        X = np.concatenate([s.X for s in self.shards], axis=1)
        labels = None
        if self.has_labels:
            labels = np.concatenate([s.labels for s in self.shards])
        return Problem([DataShard(X, 1.0, labels)], self.K, self.rho, self.nu,
                       self.w_lo, self.w_hi, self.h_constraint, dict(self.meta))


# Step sizes only ever need lambda_max of K x K Gram matrices, so they can
# afford a tight tolerance; the Rayleigh quotient underestimates, which would
# otherwise make steps marginally longer than the bound allows.
STEP_TOL = 1e-12


def gram_lambda_max(A: np.ndarray) -> float:
    """lambda_max of a Gram matrix at the tolerance used for step sizes."""
    return lambda_max_psd(A, tol=STEP_TOL, max_iter=10_000)


def _check_penalties(rho: float, nu: float) -> None:
    if rho < 0 or nu < 0:
        raise ValueError(f"penalties must be non-negative, got rho={rho}, nu={nu}")


def _check_shapes(W: np.ndarray, H_p: np.ndarray, X_p: np.ndarray) -> None:
    if W.shape[0] != X_p.shape[0] or W.shape[1] != H_p.shape[0] or H_p.shape[1] != X_p.shape[1]:
        raise DimensionError(
            f"shape mismatch: W {W.shape}, H_p {H_p.shape}, X_p {X_p.shape}")


def reg_H(H_p: np.ndarray, rho: float, nu: float) -> float:
    _check_penalties(rho, nu)
    colsum = H_p.sum(axis=0)
    sq = frob_norm_sq(H_p)
    return 0.5 * rho * (float(colsum @ colsum) - sq) + 0.5 * nu * sq


def objective_local(W, H_p, shard: DataShard, rho: float, nu: float) -> float:
    _check_shapes(W, H_p, shard.X)
    R = shard.X - W @ H_p
    return frob_norm_sq(R) / shard.n_samples + reg_H(H_p, rho, nu) / shard.omega


def objective_global(state: FactorState, problem: Problem) -> float:
    if len(state.H) != problem.P:
        raise DimensionError(f"{len(state.H)} assignment blocks for {problem.P} shards")
    return sum(s.omega * objective_local(state.W, H_p, s, problem.rho, problem.nu)
               for s, H_p in zip(problem.shards, state.H))


def grad_H_local(W, H_p, shard: DataShard, rho: float, nu: float) -> np.ndarray:
    """Gradient of ``F_p`` with respect to ``H_p``."""
    _check_shapes(W, H_p, shard.X)
    _check_penalties(rho, nu)
    g = (2.0 / shard.n_samples) * ((W.T @ W) @ H_p - W.T @ shard.X)
    if rho or nu:
        # (11^T - I) H = colsum broadcast minus H
        reg = rho * (H_p.sum(axis=0, keepdims=True) - H_p) + nu * H_p
        g += reg / shard.omega
    return g


def grad_W_local(W, H_p, shard: DataShard) -> np.ndarray:
    """Gradient of ``F_p`` with respect to ``W``: (2/N_p)(W H_p H_p^T - X_p H_p^T)."""
    _check_shapes(W, H_p, shard.X)
    return (2.0 / shard.n_samples) * (W @ (H_p @ H_p.T) - shard.X @ H_p.T)


def grad_W(W, H_list: Sequence[np.ndarray], shards: Sequence[DataShard],
           rho: float = 0.0, nu: float = 0.0, grad_R_W=None) -> np.ndarray:
    """Gradient of the global objective with respect to ``W``.

    ``rho`` and ``nu`` do not enter (the regularizer only involves ``H``); they
    are accepted so callers can pass a problem's penalties uniformly.
    ``grad_R_W`` is an optional additive term for a centroid regularizer.
    """
    if len(H_list) != len(shards):
        raise DimensionError("one assignment block per shard required")
    N = sum(s.n_samples for s in shards)
    K = W.shape[1]
    HHt = np.zeros((K, K))
    XHt = np.zeros_like(W)
    for H_p, s in zip(H_list, shards):
        _check_shapes(W, H_p, s.X)
        HHt += H_p @ H_p.T
        XHt += s.X @ H_p.T
    g = (2.0 / N) * (W @ HHt - XHt)
    if grad_R_W is not None:
        g = g + grad_R_W(W)
    return g


def gram(H_list: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_p H_p H_p^T``, i.e. ``H H^T`` for the column-concatenated ``H``."""
    return sum(H_p @ H_p.T for H_p in H_list)


def lipschitz_H(W, n_samples: int, omega: float, rho: float, nu: float, K: int,
                lam: float | None = None) -> float:
    """Analytic Lipschitz bound of grad_H F_p for fixed ``W``.

    ``lam`` may pass a precomputed lambda_max(W^T W).
    """
    if lam is None:
        lam = gram_lambda_max(W.T @ W)
    return (2.0 / n_samples) * lam + (rho * (K - 1) + nu) / omega


def lipschitz_W(HHt: np.ndarray, N: int) -> float:
    """Lipschitz constant of grad_W F for fixed ``H``: (2/N) lambda_max(H H^T)."""
    return (2.0 / N) * gram_lambda_max(HHt)


def step_H(W, shard: DataShard, rule, gamma: float = 2.0, rho: float = 0.0,
           nu: float = 0.0, lam: float | None = None) -> float:
    """Inverse step size ``c_p`` for the H-update of one client.

    ``lam`` may pass a precomputed lambda_max(W^T W).
    """
    rule = HStepRule(rule)
    if lam is None:
        lam = gram_lambda_max(W.T @ W)
    if rule is HStepRule.PRACTICAL:
        c = 0.5 * lam
    else:
        if gamma <= 1:
            raise ValueError(f"theorem step rule needs gamma > 1, got {gamma}")
        c = 0.5 * gamma * lipschitz_H(W, shard.n_samples, shard.omega, rho, nu, W.shape[1], lam)
    return _positive(c)


def step_W_gram(HHt: np.ndarray, s: int, rule, gamma: float, N: int) -> float:
    """Inverse step size ``d^s`` from the Gram matrix ``H H^T``."""
    rule = WStepRule(rule)
    if s < 1:
        raise ValueError(f"round index must be >= 1, got {s}")
    if rule is WStepRule.PRACTICAL_AVG:
        d = gram_lambda_max(HHt)
    elif rule is WStepRule.PRACTICAL_GDS:
        d = 0.5 * gram_lambda_max(HHt)
    elif rule is WStepRule.DIMINISHING:
        d = (s + 1) * lipschitz_W(HHt, N)
    else:
        if gamma <= 1:
            raise ValueError(f"step rule {rule.value} needs gamma > 1, got {gamma}")
        L = lipschitz_W(HHt, N)
        d = gamma * L if rule is WStepRule.CONSTANT else 0.5 * gamma * L
    return _positive(d)


def step_W(H_list: Sequence[np.ndarray], s: int, rule, gamma: float, N: int) -> float:
    return step_W_gram(gram(H_list), s, rule, gamma, N)


def _positive(x: float) -> float:
    # A zero curvature (e.g. H == 0) would make the step infinite; the gradient
    # is then zero along the affected block, so any finite step is harmless.
    return x if x > 0 else 1.0
