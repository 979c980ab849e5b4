"""Naive baseline: Q/2 local PALM iterations per client, then model averaging."""
from __future__ import annotations

import numpy as np

from ..fedruntime import Federation, Message, RoundPlan, Variant
from ..model import (
    FactorState,
    Problem,
    grad_H_local,
    grad_W_local,
    gram,
    step_H,
    step_W_gram,
)
from .base import FedConfig, Probe, RunResult, Solver, StepInfo, drive


class FedCPALM(Solver):
    """Every client alternates one projected H-step and one projected W-step,
    ``Q/2`` times, starting from the broadcast ``W``; the server averages and
    projects as in model averaging.

    ``c_p`` follows the client's current local ``W``. ``d`` is shared by all
    clients at each local iteration and computed from every client's current H,
    which makes ``Q/2 = 1`` coincide with one-epoch model averaging whenever
    the local projection is inactive.
    """

    name = "fedcpalm"

    def __init__(self, problem: Problem, config: FedConfig, init: FactorState | None = None,
                 probe: Probe | None = None, federation: Federation | None = None):
        super().__init__(problem, config, init, probe)
        self.state.W = problem.project_W(self.state.W)
        self.fed = federation or Federation(problem.P, problem.M, problem.K)

    def step(self) -> StepInfo:
        pb, cfg = self.problem, self.config
        self.s += 1
        s = self.s
        iters = (cfg.Q1 + cfg.Q2) // 2
        H = self.state.H
        W_loc: dict[int, np.ndarray] = {}
        shared = {"d": None}
        w_rule = cfg.w_rule(self.name)

        def h_phase(p: int, W_in: np.ndarray) -> None:
            sh = pb.shards[p]
            W_p = W_loc.setdefault(p, W_in.copy())
            c = step_H(W_p, sh, cfg.step_rule_H, cfg.gamma, pb.rho, pb.nu)
            H[p] = pb.project_H(H[p] - grad_H_local(W_p, H[p], sh, pb.rho, pb.nu) / c)

        def w_phase(p: int, _W_in: np.ndarray) -> None:
            W_p = W_loc[p]
            W_loc[p] = pb.project_W(W_p - grad_W_local(W_p, H[p], pb.shards[p]) / shared["d"])

        def sync(phase: int) -> None:
            if phase % 2 == 0:
                shared["d"] = step_W_gram(gram(H), s, w_rule, cfg.gamma, pb.N)

        def client_step(p: int, _W_in: np.ndarray) -> Message:
            return Message.upload_w(W_loc[p], p, s)

        def server_step(uploads: list[Message]) -> np.ndarray:
            avg = np.zeros((pb.M, pb.K))
            for msg in sorted(uploads, key=lambda m: m.sender):
                avg += pb.shards[msg.sender].omega * msg.payload[0]
            return pb.project_W(avg)

        plan = RoundPlan(s, range(pb.P), self.state.W, client_step, server_step,
                         Variant.UPLOAD_W, local_phases=[h_phase, w_phase] * iters, sync=sync)
        W_next = self.fed.run_round(plan)
        self.state = FactorState(W_next, H)
        return StepInfo(active=pb.P, uplink=self.fed.meter.uplink_total, epochs=2 * iters)


def run_fedcpalm(problem: Problem, config: FedConfig, init: FactorState | None = None,
                 probe: Probe | None = None) -> RunResult:
    return drive(FedCPALM(problem, config, init, probe))
