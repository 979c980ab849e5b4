"""Centralized alternating projected gradient (PALM) on the pooled data."""
from __future__ import annotations

import numpy as np

from ..model import (
    FactorState,
    Problem,
    grad_H_local,
    grad_W,
    step_H,
    step_W_gram,
)
from .base import FedConfig, Probe, RunResult, Solver, StepInfo, drive, initial_state


class CentralizedPALM(Solver):
    """One iteration: H <- P_H(H - grad_H / c), then W <- P_W(W - grad_W / d)."""

    name = "palm"

    def __init__(self, problem: Problem, config: FedConfig, init: FactorState | None = None,
                 probe: Probe | None = None):
        if init is not None and problem.P > 1:
            init = FactorState(init.W, [np.concatenate(init.H, axis=1)])
        central = problem.centralized()
        if init is None:
            start = initial_state(problem, config.seed)
            init = FactorState(start.W, [np.concatenate(start.H, axis=1)])
        super().__init__(central, config, init, probe)
        self.state.W = central.project_W(self.state.W)

    def step(self) -> StepInfo:
        pb, cfg = self.problem, self.config
        self.s += 1
        sh = pb.shards[0]
        W, H = self.state.W, self.state.H[0]
        c = step_H(W, sh, cfg.step_rule_H, cfg.gamma, pb.rho, pb.nu)
        H = pb.project_H(H - grad_H_local(W, H, sh, pb.rho, pb.nu) / c)
        d = step_W_gram(H @ H.T, self.s, cfg.w_rule(self.name), cfg.gamma, pb.N)
        W = pb.project_W(W - grad_W(W, [H], [sh]) / d)
        self._emit("iteration", round=self.s, W=W, H=H, c=c, d=d)
        self.state = FactorState(W, [H])
        return StepInfo(active=1, uplink=0, epochs=2)


def run_palm_centralized(problem: Problem, config: FedConfig,
                         init: FactorState | None = None, probe: Probe | None = None) -> RunResult:
    return drive(CentralizedPALM(problem, config, init, probe))
