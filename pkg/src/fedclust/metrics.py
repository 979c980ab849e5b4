"""Round traces, the stopping statistic and clustering accuracy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment


class UndefinedStatisticError(ValueError):
    pass


@dataclass
class RoundTrace:
    round: int
    objective: float
    epsilon: float
    uplink_cost: int
    active: int
    wall_time: float = 0.0
    accuracy: Optional[float] = None
    bootstrap_cost: int = 0
    # Per-round contribution to the averaged descent measure, and the number
    # of gradient epochs it spans (Q1 + Q2 of that round).
    descent: float = 0.0
    epochs: int = 0
    rho: Optional[float] = None


def epsilon(F_prev: float, F_cur: float) -> float:
    """Normalized absolute change ``|F_cur - F_prev| / F_prev``."""
    if not F_prev > 0:
        raise UndefinedStatisticError(f"previous objective must be positive, got {F_prev}")
    return abs(F_cur - F_prev) / F_prev


def assign_labels(H: np.ndarray) -> np.ndarray:
    """Row index of each column's maximum; ties go to the lowest index."""
    return np.argmax(np.asarray(H), axis=0)


def confusion(pred: np.ndarray, truth: np.ndarray, K: int) -> np.ndarray:
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (pred, truth), 1)
    return C


def clustering_accuracy(pred, truth, K: int) -> float:
    """Fraction of samples matched under the best relabeling of ``pred``.

    Labels are 0-based. The best permutation is found by a linear assignment
    on the K x K confusion matrix.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth must have equal length")
    for name, lab in (("pred", pred), ("truth", truth)):
        if lab.size and (lab.min() < 0 or lab.max() >= K):
            raise ValueError(f"{name} labels must lie in [0, {K})")
    if pred.size == 0:
        raise ValueError("accuracy of an empty labeling is undefined")
    C = confusion(pred, truth, K)
    rows, cols = linear_sum_assignment(C, maximize=True)
    return float(C[rows, cols].sum()) / pred.size
