"""Acceptance criteria at desk scale (M=50, N=500, K=5, P=10, 10 seeds).

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
import time

import numpy as np
import pytest

from fedclust.algorithms import (
    CentralizedPALM,
    FedCAvg,
    FedCGds,
    FedConfig,
    SncpSchedule,
    drive,
    run_kmeanspp,
    run_sncp,
)
from fedclust.cli import main
from fedclust.fedruntime import closed_form_cost
from fedclust.linalg import TAG_KMEANS, make_rng
from fedclust.metrics import clustering_accuracy
from fedclust.model import FactorState, grad_H_local, grad_W, objective_global, objective_local
from conftest import ACCEPTANCE, desk_problem, random_problem
from oracles import finite_diff_grad

SEEDS = range(10)
BUDGET = 50
NO_STOP = 1e-300

# every federated run of this module, for the metering check
RUNS = []


def verdict(n, title, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


_problems = {}


def problem(scheme, seed):
    key = (scheme, seed)
    if key not in _problems:
        _problems[key] = desk_problem(scheme, seed=seed)
    return _problems[key]


def run(cls, pb, **cfg):
    cfg.setdefault("S_max", BUDGET)
    cfg.setdefault("eps_stop", NO_STOP)
    res = drive(cls(pb, FedConfig(**cfg)))
    RUNS.append((cls.__name__.lower(), pb, FedConfig(**cfg), res.traces))
    return res


def test_1_gradients_match_finite_differences():
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        M, K = int(r.integers(2, 8)), int(r.integers(1, 5))
        sizes = tuple(int(n) for n in r.integers(1, 9, int(r.integers(1, 4))))
        pb = random_problem(r, M, K, sizes, rho=float(r.uniform(0.01, 2)),
                            nu=float(r.uniform(0.01, 2)))
        W = r.standard_normal((M, K))
        H = [r.uniform(0, 1, (K, n)) for n in sizes]
        for sh, H_p in zip(pb.shards, H):
            fd = finite_diff_grad(lambda Z: objective_local(W, Z, sh, pb.rho, pb.nu), H_p)
            worst = max(worst, rel(grad_H_local(W, H_p, sh, pb.rho, pb.nu), fd))
        fd = finite_diff_grad(lambda Z: objective_global(FactorState(Z, H), pb), W)
        worst = max(worst, rel(grad_W(W, H, pb.shards, pb.rho, pb.nu), fd))
    dt = time.perf_counter() - t0
    verdict(1, "gradients vs finite differences", worst <= 1e-5 and dt < 10,
            f"worst rel err {worst:.2e} (<= 1e-5), {dt:.1f}s (< 10s)")


def test_2_single_client_fedcavg_is_palm():
    t0 = time.perf_counter()
    pb = desk_problem("uniform_iid", seed=0, P=1)
    cfg = FedConfig(Q1=1, Q2=1, gamma=2.0, step_rule_H="theorem", step_rule_W="diminishing",
                    seed=0)
    avg, palm = FedCAvg(pb, cfg), CentralizedPALM(pb, cfg)
    worst = 0.0
    for _ in range(60):
        avg.step()
        palm.step()
        worst = max(worst, rel(avg.state.W, palm.state.W), rel(avg.state.H[0], palm.state.H[0]))
    dt = time.perf_counter() - t0
    verdict(2, "FedCAvg with P=1 equals centralized PALM", worst <= 1e-12 and dt < 5,
            f"worst rel state gap {worst:.2e} over 60 iterations (<= 1e-12), {dt:.1f}s (< 5s)")


def test_3_server_gradient_reconstruction():
    t0 = time.perf_counter()
    pb = problem("similarity_kmeans", 0)
    worst, epochs = 0.0, 0

    def probe(name, info):
        nonlocal worst, epochs
        if name == "server_epoch":
            ref = grad_W(info["W"], info["H"], pb.shards, pb.rho, pb.nu)
            worst = max(worst, rel(info["grad"], ref))
            epochs += 1

    cfg = FedConfig(Q1=10, Q2=3, m=pb.P // 2, S_max=BUDGET, eps_stop=NO_STOP, seed=0)
    res = drive(FedCGds(pb, cfg, probe=probe))
    RUNS.append(("fedcgds", pb, cfg, res.traces))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and epochs == 3 * BUDGET and dt < 30
    verdict(3, "server-built gradient, m = P/2", ok,
            f"worst rel err {worst:.2e} over {epochs} server epochs (<= 1e-10), {dt:.1f}s (< 30s)")


THEOREM_GDS = dict(step_rule_H="theorem", step_rule_W="half_gamma", gamma=1.5)


def test_4_full_participation_descent():
    t0 = time.perf_counter()
    bad = []
    for seed in SEEDS:
        pb = problem("uniform_iid", seed)
        res = run(FedCGds, pb, Q1=10, Q2=1, S_max=200, seed=seed, **THEOREM_GDS)
        F = [res.initial_objective] + [t.objective for t in res.traces]
        if len(F) != 201 or any(b > a * (1 + 1e-9) for a, b in zip(F, F[1:])):
            bad.append(seed)
    dt = time.perf_counter() - t0
    verdict(4, "FedCGds m=P objective nonincreasing", not bad and dt < 60,
            f"{10 - len(bad)}/10 seeds monotone over 200 rounds, {dt:.1f}s (< 60s)")


def averaged_descent(traces, S):
    return sum(t.descent for t in traces[:S]) / S


def test_5_descent_measure_rate():
    # the run of budget S is the first S rounds of the run of budget 2S
    ratios = {"fedcavg": [], "fedcgds": []}
    for seed in SEEDS:
        pb = problem("uniform_iid", seed)
        avg = run(FedCAvg, pb, Q1=10, Q2=1, S_max=2 * BUDGET, seed=seed, gamma=2.0,
                  step_rule_H="theorem", step_rule_W="diminishing")
        gds = run(FedCGds, pb, Q1=10, Q2=1, S_max=2 * BUDGET, seed=seed, **THEOREM_GDS)
        for name, res in (("fedcavg", avg), ("fedcgds", gds)):
            assert len(res.traces) == 2 * BUDGET
            ratios[name].append(averaged_descent(res.traces, BUDGET)
                                / averaged_descent(res.traces, 2 * BUDGET))
    lo = min(min(v) for v in ratios.values())
    hi = max(max(v) for v in ratios.values())
    verdict(5, "averaged descent halves when rounds double", 2 / 2.5 <= lo and hi <= 2 * 2.5,
            f"A(S)/A(2S) in [{lo:.3f}, {hi:.3f}] for S={BUDGET} "
            f"(allowed [0.8, 5]; fedcavg mean {np.mean(ratios['fedcavg']):.3f}, "
            f"fedcgds mean {np.mean(ratios['fedcgds']):.3f})")


def _runs_for_7_and_8():
    out = {}
    for seed in SEEDS:
        for scheme in ("uniform_iid", "similarity_kmeans"):
            pb = problem(scheme, seed)
            out[scheme, "avg10", seed] = run(FedCAvg, pb, Q1=10, Q2=1, seed=seed)
            out[scheme, "gds10", seed] = run(FedCGds, pb, Q1=10, Q2=1, seed=seed)
        out["uniform_iid", "avg1", seed] = run(FedCAvg, problem("uniform_iid", seed),
                                               Q1=1, Q2=1, seed=seed)
    return out


@pytest.fixture(scope="module")
def practical_runs():
    return _runs_for_7_and_8()


def final_F(res):
    return res.traces[-1].objective


def test_7_longer_h_epochs_help(practical_runs):
    r = practical_runs
    wins = sum(final_F(r["uniform_iid", "avg10", s]) < final_F(r["uniform_iid", "avg1", s])
               for s in SEEDS)
    m10 = np.mean([final_F(r["uniform_iid", "avg10", s]) for s in SEEDS])
    m1 = np.mean([final_F(r["uniform_iid", "avg1", s]) for s in SEEDS])
    verdict(7, "FedCAvg Q1=10 beats Q1=1 (i.i.d.)", wins >= 8,
            f"{wins}/10 seeds lower F after {BUDGET} rounds (>= 8); mean F {m10:.3f} vs {m1:.3f}")


def test_8_gradient_sharing_on_skewed_data(practical_runs):
    r = practical_runs
    sim = "similarity_kmeans"
    wins = sum(final_F(r[sim, "gds10", s]) <= final_F(r[sim, "avg10", s]) for s in SEEDS)
    gds = np.mean([final_F(r["uniform_iid", "gds10", s]) for s in SEEDS])
    avg = np.mean([final_F(r["uniform_iid", "avg10", s]) for s in SEEDS])
    gap = abs(gds - avg) / max(gds, avg)
    verdict(8, "FedCGds vs FedCAvg", wins >= 8 and gap <= 0.10,
            f"similarity: FedCGds <= FedCAvg in {wins}/10 seeds (>= 8); "
            f"i.i.d.: mean F {gds:.3f} vs {avg:.3f}, gap {gap:.1%} (<= 10%)")


def test_9_sncp_accuracy_beats_kmeans():
    schedule = SncpSchedule(rho0=1e-8, factor=1.5, trigger_eps=2e-5, final_eps=1e-8)
    sncp_acc, km_acc = [], []
    for seed in SEEDS:
        pb = problem("similarity_kmeans", seed)
        cfg = FedConfig(Q1=10, Q2=1, S_max=2000, seed=seed, **THEOREM_GDS)
        res = run_sncp(pb, "fedcgds", schedule, cfg)
        RUNS.append(("fedcgds", pb, cfg, res.traces))
        sncp_acc.append(res.traces[-1].accuracy)
        pooled = pb.centralized().shards[0]
        km = run_kmeanspp(pooled.X, pb.K, make_rng(seed, TAG_KMEANS))
        km_acc.append(clustering_accuracy(km.labels, pooled.labels, pb.K))
    a, b = float(np.mean(sncp_acc)), float(np.mean(km_acc))
    verdict(9, "SNCP FedCGds accuracy vs K-means++", a >= b,
            f"mean accuracy {a:.3f} vs {b:.3f} over 10 seeds")


def test_6_metered_uplink_is_closed_form():
    # own runs, plus every run made by the other criteria in this module
    for seed in range(3):
        pb = problem("uniform_iid", seed)
        run(FedCAvg, pb, Q1=2, Q2=1, S_max=20, seed=seed)
        run(FedCGds, pb, Q1=2, Q2=1, m=pb.P // 2, S_max=20, seed=seed)
    rounds, bad = 0, 0
    for name, pb, cfg, traces in RUNS:
        m = cfg.participants(pb.P)
        boot = pb.P * (pb.M * pb.K + pb.K ** 2) if name == "fedcgds" else 0
        for t in traces:
            rounds += 1
            want = boot + closed_form_cost(name, pb.M, pb.K, m, t.round)
            bad += t.uplink_cost != want or t.bootstrap_cost != boot
    verdict(6, "metered uplink equals closed form", bad == 0 and rounds > 0,
            f"{rounds - bad}/{rounds} rounds exact over {len(RUNS)} runs")


CLI_CONFIG = """\
dataset:
  synthetic: {M: 50, N: 500, K: 5, snr_db: -3.0, seed: 3}
partition: {scheme: similarity_kmeans, P: 10}
model: {rho: 1.0e-8, nu: 1.0e-10}
trials: 2
sncp: {rho0: 1.0e-8, factor: 1.5, trigger_eps: 1.0e-3, final_eps: 1.0e-4}
algorithms:
  - {name: avg, solver: fedcavg, Q1: 10, Q2: 1, S_max: 20}
  - {name: gds_half, solver: fedcgds, Q1: 10, Q2: 1, m: 5, S_max: 20}
  - {name: sncp_gds, solver: fedcgds, sncp: true, Q1: 5, Q2: 1, S_max: 30}
  - {name: kmeans, solver: kmeanspp}
"""


def test_10_cli_rerun_is_bit_identical(tmp_path):
    cfg = tmp_path / "desk.yaml"
    cfg.write_text(CLI_CONFIG)
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["run", str(cfg), "--output-dir", str(o)]) for o in outs]
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    other = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*.csv"))
    same = sum((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
    ok = codes == [0, 0] and files == other and len(files) == 13 and same == len(files)
    verdict(10, "CLI rerun determinism", ok, f"{same}/{len(files)} CSV files bit-identical")
