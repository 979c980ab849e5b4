"""Configuration, initialization and the shared round loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from ..linalg import TAG_INIT, make_rng
from ..metrics import RoundTrace, assign_labels, clustering_accuracy, epsilon
from ..model import FactorState, HStepRule, Problem, WStepRule, objective_global

SOLVERS = ("fedcavg", "fedcgds", "fedcpalm", "palm")

DEFAULT_W_RULE = {
    "fedcavg": WStepRule.PRACTICAL_AVG,
    "fedcpalm": WStepRule.PRACTICAL_AVG,
    "palm": WStepRule.PRACTICAL_AVG,
    "fedcgds": WStepRule.PRACTICAL_GDS,
}

Probe = Callable[[str, dict], None]


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class FedConfig:
    gamma: float = 2.0
    Q1: int = 1
    Q2: int = 1
    Q_hat: Optional[float] = None
    m: Optional[int] = None
    S_max: int = 100
    eps_stop: float = 1e-6
    step_rule_H: HStepRule = HStepRule.PRACTICAL
    step_rule_W: Optional[WStepRule] = None
    seed: int = 0

    def __post_init__(self):
        self.step_rule_H = HStepRule(self.step_rule_H)
        if self.step_rule_W is not None:
            self.step_rule_W = WStepRule(self.step_rule_W)

    def Q2_at(self, s: int) -> int:
        """W epochs in round ``s``: constant, or floor(Q_hat / s) + 1."""
        if self.Q_hat is not None:
            return int(math.floor(self.Q_hat / s)) + 1
        return self.Q2

    def w_rule(self, solver: str) -> WStepRule:
        return self.step_rule_W if self.step_rule_W is not None else DEFAULT_W_RULE[solver]

    def participants(self, P: int) -> int:
        return P if self.m is None else self.m

    def violations(self, P: int, solver: str) -> list[str]:
        out = []
        if solver not in SOLVERS:
            out.append(f"unknown solver {solver!r}")
            return out
        if self.Q1 < 1:
            out.append("Q1 must be >= 1")
        if self.Q2 < 1:
            out.append("Q2 must be >= 1")
        if self.Q_hat is not None and self.Q_hat <= 0:
            out.append("Q_hat must be positive")
        if self.S_max < 1:
            out.append("S_max must be >= 1")
        if not self.eps_stop > 0:
            out.append("eps_stop must be positive")
        if self.seed < 0:
            out.append("seed must be non-negative")
        m = self.participants(P)
        if solver != "palm":  # centralized: no clients to sample
            if m > P:
                out.append(f"participation exceeds client count (m={m} > P={P})")
            elif m < 1:
                out.append("participation must be at least one client")
            elif solver in ("fedcavg", "fedcpalm") and m != P:
                out.append(f"{solver} requires full participation (m={m}, P={P})")
        needs_gamma = (self.step_rule_H is HStepRule.THEOREM
                       or self.w_rule(solver) in (WStepRule.CONSTANT, WStepRule.HALF_GAMMA))
        if needs_gamma and not self.gamma > 1:
            out.append(f"gamma must exceed 1 for theorem step rules (gamma={self.gamma})")
        if solver == "fedcpalm" and (self.Q1 + self.Q2) % 2:
            out.append("fedcpalm requires an even epoch count Q = Q1 + Q2")
        return out

    def validate(self, P: int, solver: str) -> None:
        v = self.violations(P, solver)
        if v:
            raise ConfigError(v)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def initial_state(problem: Problem, seed: int) -> FactorState:
    """Random feasible start: W uniform in the box, H_p uniform in [0, 1) then projected."""
    rng = make_rng(seed, TAG_INIT)
    W = rng.uniform(problem.w_lo, problem.w_hi, size=(problem.M, problem.K))
    H = [problem.project_H(rng.uniform(0.0, 1.0, size=(problem.K, s.n_samples)))
         for s in problem.shards]
    return FactorState(W, H)


@dataclass
class StepInfo:
    active: int
    uplink: int
    bootstrap: int = 0
    descent: float = 0.0
    epochs: int = 0


class Solver:
    """A solver advances one round per :meth:`step`.

    ``state`` always holds the point at which the global objective is
    reported for the round just finished.
    """

    name = "solver"

    def __init__(self, problem: Problem, config: FedConfig, init: FactorState | None = None,
                 probe: Probe | None = None):
        config.validate(problem.P, self.name)
        self.problem = problem
        self.config = config
        self.probe = probe
        self.s = 0
        init = init if init is not None else initial_state(problem, config.seed)
        self._check_init(init)
        self.state = init.copy()

    def _check_init(self, init: FactorState) -> None:
        p = self.problem
        if init.W.shape != (p.M, p.K) or len(init.H) != p.P:
            raise ValueError("initial state does not match the problem's shape")
        for H_p, sh in zip(init.H, p.shards):
            if H_p.shape != (p.K, sh.n_samples):
                raise ValueError("initial H block does not match its shard")

    def step(self) -> StepInfo:
        raise NotImplementedError

    def _emit(self, event: str, **info) -> None:
        if self.probe is not None:
            self.probe(event, info)


def labels_and_accuracy(state: FactorState, problem: Problem) -> Optional[float]:
    if not problem.has_labels:
        return None
    pred = np.concatenate([assign_labels(H_p) for H_p in state.H])
    truth = np.concatenate([s.labels for s in problem.shards])
    return clustering_accuracy(pred, truth, problem.K)


def next_epsilon(F_prev: Optional[float], F: float) -> float:
    """Stopping statistic; +inf without a predecessor, 0 once F_prev hits 0."""
    if F_prev is None:
        return math.inf
    if F_prev == 0.0:
        return 0.0 if F == 0.0 else math.inf
    return epsilon(F_prev, F)


def check_finite(state: FactorState, s: int) -> None:
    if not np.all(np.isfinite(state.W)) or not all(np.all(np.isfinite(h)) for h in state.H):
        raise FloatingPointError(f"iterates diverged (non-finite values) in round {s}")


@dataclass
class RunResult:
    state: FactorState
    traces: list[RoundTrace] = field(default_factory=list)
    initial_objective: float = 0.0

    def __iter__(self):
        # Allows ``state, traces = run_x(...)``.
        yield self.state
        yield self.traces


def drive(solver: Solver, S_max: int | None = None, eps_stop: float | None = None) -> RunResult:
    """Run rounds until the stopping statistic drops below ``eps_stop``."""
    cfg = solver.config
    S_max = cfg.S_max if S_max is None else S_max
    eps_stop = cfg.eps_stop if eps_stop is None else eps_stop
    F0 = objective_global(solver.state, solver.problem)
    result = RunResult(solver.state, [], F0)
    if F0 == 0.0:
        return result
    F_prev = None
    for _ in range(S_max):
        t0 = time.perf_counter()
        info = solver.step()
        check_finite(solver.state, solver.s)
        F = objective_global(solver.state, solver.problem)
        eps = next_epsilon(F_prev, F)
        result.traces.append(RoundTrace(
            round=solver.s, objective=F, epsilon=eps, uplink_cost=info.uplink,
            active=info.active, wall_time=time.perf_counter() - t0,
            accuracy=labels_and_accuracy(solver.state, solver.problem),
            bootstrap_cost=info.bootstrap, descent=info.descent, epochs=info.epochs,
            rho=solver.problem.rho))
        if eps < eps_stop:
            break
        F_prev = F
    result.state = solver.state
    return result
