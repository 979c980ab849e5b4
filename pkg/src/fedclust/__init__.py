"""Federated clustering by distributed matrix factorization."""
from .model import DataShard, FactorState, HConstraint, HStepRule, Problem, WStepRule

__version__ = "0.1.0"

__all__ = ["DataShard", "FactorState", "HConstraint", "HStepRule", "Problem", "WStepRule"]
