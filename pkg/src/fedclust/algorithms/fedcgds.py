"""Gradient sharing with differential uploads and partial participation."""
from __future__ import annotations

import numpy as np

from ..fedruntime import Federation, Message, Participation, RoundPlan, Variant
from ..linalg import TAG_SAMPLING, frob_norm_sq, make_rng
from ..model import (
    FactorState,
    Problem,
    grad_H_local,
    gram_lambda_max,
    lipschitz_H,
    lipschitz_W,
    step_H,
    step_W_gram,
)
from .base import FedConfig, Probe, RunResult, Solver, StepInfo, drive


class FedCGds(Solver):
    """Server-side W updates from accumulated gradient statistics.

    The server keeps ``gram = (2/N) sum_p H_p H_p^T`` and
    ``cross = (2/N) sum_p X_p H_p^T`` so that ``grad_W F = W gram - cross``. Each round
    ``m`` sampled clients run ``Q1`` projected H-steps and upload only the
    change of their two statistics; clients outside the sample keep their H.
    The server then takes ``Q2`` projected gradient steps on ``W``.

    Before round 1 every client uploads its full statistics once (metered as
    bootstrap traffic).
    """

    name = "fedcgds"

    def __init__(self, problem: Problem, config: FedConfig, init: FactorState | None = None,
                 probe: Probe | None = None, federation: Federation | None = None):
        super().__init__(problem, config, init, probe)
        pb = problem
        self.state.W = pb.project_W(self.state.W)
        self.fed = federation or Federation(pb.P, pb.M, pb.K)
        self.participation = Participation(pb.P, config.participants(pb.P),
                                           make_rng(config.seed, TAG_SAMPLING))
        self.gram = np.zeros((pb.K, pb.K))
        self.cross = np.zeros((pb.M, pb.K))
        boot = []
        for p, (H_p, sh) in enumerate(zip(self.state.H, pb.shards)):
            boot.append(Message(Variant.UPLOAD_DIFF, p, 0, (H_p @ H_p.T, sh.X @ H_p.T)))
        self._accumulate(self.fed.bootstrap(boot))

    def _accumulate(self, uploads: list[Message]) -> None:
        scale = 2.0 / self.problem.N
        for msg in sorted(uploads, key=lambda m: m.sender):
            d_gram, d_cross = msg.payload
            self.gram += scale * d_gram
            self.cross += scale * d_cross

    def step(self) -> StepInfo:
        pb, cfg = self.problem, self.config
        self.s += 1
        s = self.s
        Q1, Q2 = cfg.Q1, cfg.Q2_at(s)
        active = self.participation.sample(s)
        W_s = self.state.W
        H = self.state.H
        h_descent = [0.0]

        # every active client receives the same W^s, so lambda_max(W^T W) is shared
        lam = gram_lambda_max(W_s.T @ W_s)

        def client_step(p: int, W_in: np.ndarray) -> Message:
            sh = pb.shards[p]
            c = step_H(W_in, sh, cfg.step_rule_H, cfg.gamma, pb.rho, pb.nu, lam)
            L_H = lipschitz_H(W_in, sh.n_samples, sh.omega, pb.rho, pb.nu, pb.K, lam)
            H0 = H[p]
            H_p, moved = H0, 0.0
            for _ in range(Q1):
                H_new = pb.project_H(H_p - grad_H_local(W_in, H_p, sh, pb.rho, pb.nu) / c)
                moved += frob_norm_sq(H_new - H_p)
                H_p = H_new
            H[p] = H_p
            h_descent[0] += sh.omega * L_H * moved
            d_gram = H_p @ H_p.T - H0 @ H0.T
            d_cross = sh.X @ H_p.T - sh.X @ H0.T
            return Message.upload_diff(d_gram, d_cross, p, s)

        def server_step(uploads: list[Message]) -> np.ndarray:
            self._accumulate(uploads)
            # H H^T = (N/2) gram is all the server needs for the step size.
            HHt = 0.5 * pb.N * self.gram
            d = step_W_gram(HHt, s, cfg.w_rule(self.name), cfg.gamma, pb.N)
            L_W = lipschitz_W(HHt, pb.N)
            W, moved = W_s, 0.0
            for t in range(Q1 + 1, Q1 + Q2 + 1):
                grad = W @ self.gram - self.cross
                self._emit("server_epoch", round=s, epoch=t, W=W, grad=grad, H=H,
                           gram=self.gram, cross=self.cross, d=d)
                W_new = pb.project_W(W - grad / d)
                moved += frob_norm_sq(W_new - W)
                W = W_new
            self._w_descent = L_W * moved
            return W

        plan = RoundPlan(s, active, W_s, client_step, server_step, Variant.UPLOAD_DIFF)
        W_next = self.fed.run_round(plan)
        self.state = FactorState(W_next, H)
        m = len(active)
        descent = (m / pb.P) * h_descent[0] + self._w_descent
        return StepInfo(active=m, uplink=self.fed.meter.uplink_total,
                        bootstrap=self.fed.meter.bootstrap, descent=descent, epochs=Q1 + Q2)


def run_fedcgds(problem: Problem, config: FedConfig, init: FactorState | None = None,
                probe: Probe | None = None) -> RunResult:
    return drive(FedCGds(problem, config, init, probe))
