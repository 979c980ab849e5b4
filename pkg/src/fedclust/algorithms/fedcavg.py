"""Model averaging: clients update H then W locally, the server averages W."""
from __future__ import annotations

import numpy as np

from ..fedruntime import Federation, Message, RoundPlan, Variant
from ..linalg import frob_norm_sq
from ..model import (
    FactorState,
    Problem,
    grad_H_local,
    gram_lambda_max,
    grad_W_local,
    gram,
    lipschitz_H,
    lipschitz_W,
    step_H,
    step_W_gram,
)
from .base import FedConfig, Probe, RunResult, Solver, StepInfo, drive


class FedCAvg(Solver):
    """Each round every client runs ``Q1`` projected H-steps with ``W`` held at
    the broadcast value, then ``Q2`` unprojected W-steps on its local cost, and
    uploads its ``W_p``. The server takes the ``omega``-weighted average and
    projects it onto the box; that average is the round's reported ``W``.
    """

    name = "fedcavg"

    def __init__(self, problem: Problem, config: FedConfig, init: FactorState | None = None,
                 probe: Probe | None = None, federation: Federation | None = None):
        super().__init__(problem, config, init, probe)
        self.state.W = problem.project_W(self.state.W)
        self.fed = federation or Federation(problem.P, problem.M, problem.K)
        self.W_local = [self.state.W.copy() for _ in range(problem.P)]

    def step(self) -> StepInfo:
        pb, cfg = self.problem, self.config
        self.s += 1
        s = self.s
        Q1, Q2 = cfg.Q1, cfg.Q2_at(s)
        W_s = self.state.W
        H = self.state.H
        w_rule = cfg.w_rule(self.name)
        rnd = {"h_descent": 0.0, "d": None, "L_W": None}
        # running omega-weighted sum of local W per W-epoch, for the averaged iterate
        W_sum = np.zeros((Q2,) + W_s.shape)

        # every client receives the same W^s, so lambda_max(W^T W) is shared
        lam = gram_lambda_max(W_s.T @ W_s)

        def h_phase(p: int, W_in: np.ndarray) -> None:
            sh = pb.shards[p]
            c = step_H(W_in, sh, cfg.step_rule_H, cfg.gamma, pb.rho, pb.nu, lam)
            L_H = lipschitz_H(W_in, sh.n_samples, sh.omega, pb.rho, pb.nu, pb.K, lam)
            H_p = H[p]
            moved = 0.0
            for _ in range(Q1):
                H_new = pb.project_H(H_p - grad_H_local(W_in, H_p, sh, pb.rho, pb.nu) / c)
                moved += frob_norm_sq(H_new - H_p)
                H_p = H_new
            H[p] = H_p
            rnd["h_descent"] += sh.omega * L_H * moved

        def sync(_phase: int) -> None:
            G = gram(H)
            rnd["d"] = step_W_gram(G, s, w_rule, cfg.gamma, pb.N)
            rnd["L_W"] = lipschitz_W(G, pb.N)

        def client_step(p: int, W_in: np.ndarray) -> Message:
            sh = pb.shards[p]
            d = rnd["d"]
            W_p = W_in.copy()
            for k in range(Q2):
                W_p = W_p - grad_W_local(W_p, H[p], sh) / d
                W_sum[k] += sh.omega * W_p
                self._emit("client_w_epoch", round=s, client=p, epoch=Q1 + k + 1, W=W_p, d=d)
            self.W_local[p] = W_p
            return Message.upload_w(W_p, p, s)

        def server_step(uploads: list[Message]) -> np.ndarray:
            avg = np.zeros_like(W_s)
            for msg in sorted(uploads, key=lambda m: m.sender):
                avg += pb.shards[msg.sender].omega * msg.payload[0]
            return pb.project_W(avg)

        plan = RoundPlan(s, range(pb.P), W_s, client_step, server_step, Variant.UPLOAD_W,
                         local_phases=[h_phase], sync=sync)
        W_next = self.fed.run_round(plan)

        w_moved, prev = 0.0, W_s
        for k in range(Q2):
            cur = pb.project_W(W_sum[k])
            w_moved += frob_norm_sq(cur - prev)
            self._emit("averaged_w_epoch", round=s, epoch=Q1 + k + 1, W_avg=cur)
            prev = cur
        descent = 0.5 * (cfg.gamma - 1.0) * rnd["h_descent"] + 0.5 * rnd["L_W"] * w_moved

        self.state = FactorState(W_next, H)
        return StepInfo(active=pb.P, uplink=self.fed.meter.uplink_total,
                        descent=descent, epochs=Q1 + Q2)


def run_fedcavg(problem: Problem, config: FedConfig, init: FactorState | None = None,
                probe: Probe | None = None) -> RunResult:
    return drive(FedCAvg(problem, config, init, probe))
