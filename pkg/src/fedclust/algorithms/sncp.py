"""Successive penalty schedule: raise rho each time the inner solver stalls."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from ..metrics import RoundTrace
from ..model import FactorState, Problem, objective_global
from .base import (
    FedConfig,
    Probe,
    RunResult,
    check_finite,
    labels_and_accuracy,
    next_epsilon,
)
from .fedcavg import FedCAvg
from .fedcgds import FedCGds
from .palm import CentralizedPALM

INNER = {"fedcavg": FedCAvg, "fedcgds": FedCGds, "palm": CentralizedPALM}


@dataclass
class SncpSchedule:
    rho0: float = 1e-8
    factor: float = 1.5
    trigger_eps: float = 2e-5
    final_eps: float = 1e-8
    nu: Optional[float] = None  # None keeps the problem's nu

    def violations(self) -> list[str]:
        out = []
        if not self.factor > 1:
            out.append("SNCP factor must exceed 1")
        if not self.final_eps < self.trigger_eps:
            out.append("SNCP final_eps must be below trigger_eps")
        if self.rho0 < 0:
            out.append("SNCP rho0 must be non-negative")
        if self.nu is not None and self.nu < 0:
            out.append("SNCP nu must be non-negative")
        return out


@dataclass
class SncpResult(RunResult):
    rho_history: list[float] = field(default_factory=list)
    stages: int = 0


def run_sncp(problem: Problem, inner: str, schedule: SncpSchedule, config: FedConfig,
             init: FactorState | None = None, probe: Probe | None = None) -> SncpResult:
    """Warm-started inner rounds under an increasing orthogonality penalty.

    Rounds continue with the same solver object; whenever the stopping
    statistic drops below ``trigger_eps`` the penalty is multiplied by
    ``factor`` and a new stage begins. The run ends when the statistic drops
    below ``final_eps`` or after ``config.S_max`` accumulated rounds. Round
    indices and uplink cost accumulate across stages.
    """
    bad = schedule.violations()
    if bad:
        raise ValueError("; ".join(bad))
    if inner not in INNER:
        raise ValueError(f"unsupported inner solver {inner!r}")
    nu = problem.nu if schedule.nu is None else schedule.nu
    pb = Problem(problem.shards, problem.K, schedule.rho0, nu, problem.w_lo, problem.w_hi,
                 problem.h_constraint, dict(problem.meta))
    solver = INNER[inner](pb, config, init, probe)
    result = SncpResult(solver.state, [], objective_global(solver.state, solver.problem),
                        rho_history=[schedule.rho0], stages=1)
    F_prev = None
    for _ in range(config.S_max):
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
        if eps < schedule.final_eps:
            break
        if eps < schedule.trigger_eps:
            solver.problem = solver.problem.with_rho(solver.problem.rho * schedule.factor)
            result.rho_history.append(solver.problem.rho)
            result.stages += 1
            # restart the statistic from the same point under the new penalty
            F = objective_global(solver.state, solver.problem)
        F_prev = F
    result.state = solver.state
    return result
