"""Command line batch runner.

    fedclust validate CONFIG
    fedclust run CONFIG [--output-dir DIR] [--trials-override N] [--seed-base S]

For each algorithm ``name`` in the config, ``run`` writes::

    DIR/name/trial_000.csv   round,F,eps,cum_uplink,accuracy
    DIR/name/mean.csv        round,mean_F,std_F,cum_uplink,mean_accuracy
    DIR/summary.csv          one row per (algorithm, trial)

Exit status: 0 success, 1 a run failed numerically, 2 invalid config,
3 an input or output file could not be read or written.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .algorithms import SOLVER_CLASSES, drive, run_kmeanspp, run_sncp
from .config import AlgorithmSpec, ConfigFileError, ExperimentConfig, Violation, load_config
from .data import MatrixFileError, build_problem, gen_synthetic, load_matrix
from .fedruntime import closed_form_cost
from .linalg import TAG_KMEANS, TAG_PARTITION, make_rng
from .metrics import clustering_accuracy
from .model import Problem

EXIT_OK, EXIT_RUN, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3

TRIAL_HEADER = ["round", "F", "eps", "cum_uplink", "accuracy"]
MEAN_HEADER = ["round", "mean_F", "std_F", "cum_uplink", "mean_accuracy"]
SUMMARY_HEADER = ["algorithm", "trial", "seed", "rounds", "final_F", "final_accuracy",
                  "cum_uplink", "bootstrap_uplink"]


class InputError(Exception):
    pass


def fmt(x) -> str:
    """Shortest round-tripping text for a float; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def build_experiment_problem(cfg: ExperimentConfig) -> Problem:
    if cfg.synthetic is not None:
        data = gen_synthetic(cfg.synthetic)
        X, labels, K = data.X, data.labels, cfg.synthetic.K
    else:
        try:
            X, labels = load_matrix(cfg.data_file)
        except OSError as e:
            raise InputError(f"cannot read data file {cfg.data_file}: {e.strerror or e}") from e
        except MatrixFileError as e:
            raise InputError(str(e)) from e
        K = cfg.K
        if labels is not None and labels.size and labels.max() >= K:
            raise ValueError(f"data file labels exceed K-1={K - 1}")
    if K > X.shape[1]:
        raise ValueError(f"K={K} exceeds the number of samples N={X.shape[1]}")
    if cfg.partition.P > X.shape[1]:
        raise ValueError(f"P={cfg.partition.P} exceeds the number of samples N={X.shape[1]}")
    rng = make_rng(cfg.data_seed, TAG_PARTITION)
    return build_problem(X, labels, K, cfg.partition, rng, cfg.model.rho, cfg.model.nu,
                         cfg.model.h_constraint)


def _clients(alg: AlgorithmSpec, P: int) -> int:
    return alg.fed.participants(P)


def expected_uplink(alg: AlgorithmSpec, problem: Problem, s: int) -> int:
    return closed_form_cost(alg.solver, problem.M, problem.K, _clients(alg, problem.P), s)


def run_trial(alg: AlgorithmSpec, problem: Problem, cfg: ExperimentConfig, seed: int):
    """Trace rows ``(round, F, eps, cum_uplink, accuracy)`` plus the bootstrap uplink."""
    if alg.solver == "kmeanspp":
        pooled = problem.centralized().shards[0]
        res = run_kmeanspp(pooled.X, problem.K, make_rng(seed, TAG_KMEANS), alg.max_iters)
        acc = None
        if pooled.labels is not None:
            acc = clustering_accuracy(res.labels, pooled.labels, problem.K)
        return [(1, res.cost / problem.N, math.inf, 0, acc)], 0
    fed = replace(alg.fed, seed=seed)
    if alg.sncp:
        result = run_sncp(problem, alg.solver, cfg.sncp, fed)
    else:
        result = drive(SOLVER_CLASSES[alg.solver](problem, fed))
    rows = [(t.round, t.objective, t.epsilon, t.uplink_cost - t.bootstrap_cost, t.accuracy)
            for t in result.traces]
    boot = result.traces[-1].bootstrap_cost if result.traces else 0
    return rows, boot


def mean_rows(alg: AlgorithmSpec, problem: Problem, trials: list[list[tuple]]):
    """Average over trials round by round; a trial that stopped early keeps its last value.

    ``cum_uplink`` is the uplink of a run that reaches the row's round.
    """
    length = max((len(t) for t in trials), default=0)
    out = []
    for i in range(length):
        picked = [t[min(i, len(t) - 1)] for t in trials if t]
        F = np.array([r[1] for r in picked])
        accs = [r[4] for r in picked if r[4] is not None]
        s = i + 1
        out.append((s, float(F.mean()), float(F.std()), expected_uplink(alg, problem, s),
                    float(np.mean(accs)) if accs else None))
    return out


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def run_experiment(cfg: ExperimentConfig, log=print) -> None:
    problem = build_experiment_problem(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for alg in cfg.algorithms:
        adir = out / alg.name
        adir.mkdir(exist_ok=True)
        traces = []
        for i in range(cfg.trials):
            seed = cfg.seed_base + i
            rows, boot = run_trial(alg, problem, cfg, seed)
            traces.append(rows)
            _write_csv(adir / f"trial_{i:03d}.csv", TRIAL_HEADER, rows)
            last = rows[-1] if rows else (0, None, None, 0, None)
            summary.append((alg.name, i, seed, last[0], last[1], last[4], last[3], boot))
        means = mean_rows(alg, problem, traces)
        _write_csv(adir / "mean.csv", MEAN_HEADER, means)
        if means:
            acc = means[-1][4]
            acc_txt = f", mean accuracy {acc:.4f}" if acc is not None else ""
            log(f"{alg.name}: {cfg.trials} trial(s), {len(means)} rounds, "
                f"final mean F {means[-1][1]:.6g}{acc_txt}")
    _write_csv(out / "summary.csv", SUMMARY_HEADER, summary)


def _report(found: Sequence[Violation], path, stream) -> None:
    print(f"{path}: {len(found)} problem(s)", file=stream)
    for v in found:
        print(f"  {v}", file=stream)


def _load(path, stream) -> tuple[Optional[ExperimentConfig], int]:
    try:
        cfg, found = load_config(path)
    except ConfigFileError as e:
        print(f"error: {e}", file=stream)
        return None, EXIT_IO
    if found:
        _report(found, path, stream)
        return None, EXIT_INVALID
    return cfg, EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fedclust", description="Federated clustering experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a config file without running it")
    v.add_argument("config")
    r = sub.add_parser("run", help="run every algorithm of a config and write CSV traces")
    r.add_argument("config")
    r.add_argument("--output-dir", help="override the config's output_dir")
    r.add_argument("--trials-override", type=int, metavar="N", help="override the trial count")
    r.add_argument("--seed-base", type=int, metavar="S", help="override the first trial seed")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    cfg, code = _load(args.config, sys.stderr)
    if cfg is None:
        return code
    if args.command == "validate":
        print(f"{args.config}: valid ({len(cfg.algorithms)} algorithm(s), {cfg.trials} trial(s))")
        return EXIT_OK

    bad = []
    if args.trials_override is not None:
        if args.trials_override < 1:
            bad.append("--trials-override must be >= 1")
        cfg.trials = args.trials_override
    if args.seed_base is not None:
        if args.seed_base < 0:
            bad.append("--seed-base must be non-negative")
        cfg.seed_base = args.seed_base
    if args.output_dir is not None:
        cfg.output_dir = Path(args.output_dir)
    if bad:
        for b in bad:
            print(f"error: {b}", file=sys.stderr)
        return EXIT_INVALID

    try:
        run_experiment(cfg)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print(f"error: cannot write output: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"error: invalid experiment: {e}", file=sys.stderr)
        return EXIT_INVALID
    except FloatingPointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
