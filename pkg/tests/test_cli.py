import csv
import math
import statistics
import subprocess
import sys
from pathlib import Path

import pytest

from fedclust.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, main
from fedclust.config import load_config
from fedclust.fedruntime import closed_form_cost

SMALL = """\
dataset:
  synthetic: {{M: 8, N: 60, K: 3, snr_db: -3.0, seed: 2}}
partition: {{scheme: uniform_iid, P: 4}}
model: {{rho: 1.0e-8, nu: 1.0e-10}}
trials: {trials}
seed_base: 0
output_dir: out
algorithms:
  - {{name: avg, solver: fedcavg, Q1: 3, Q2: 1, S_max: 15, eps_stop: 1.0e-12}}
  - {{name: gds, solver: fedcgds, Q1: 3, Q2: 1, m: 2, S_max: 15, eps_stop: 1.0e-12}}
"""

EXACT_FIT = """\
dataset:
  synthetic: {M: 8, N: 60, K: 3, snr_db: .inf, seed: 1}
partition: {scheme: uniform_iid, P: 4}
model: {rho: 0.0, nu: 0.0, h_constraint: nonneg}
trials: 1
output_dir: out
algorithms:
  - name: gds
    solver: fedcgds
    Q1: 10
    Q2: 1
    S_max: 400
    eps_stop: 1.0e-300
    step_rule_H: theorem
    step_rule_W: half_gamma
    gamma: 1.5
"""

# modelled on the full-scale experiment settings
FULL_STYLE = """\
dataset:
  synthetic: {M: 2000, N: 10000, K: 10, snr_db: -3.0, seed: 0}
partition: {scheme: similarity_kmeans, P: 100}
model: {rho: 1.0e-8, nu: 1.0e-10, h_constraint: nonneg}
trials: 10
sncp: {rho0: 1.0e-8, factor: 1.5, trigger_eps: 2.0e-5, final_eps: 1.0e-8}
algorithms:
  - {name: fedcavg, solver: fedcavg, Q1: 10, Q2: 1}
  - {name: fedcgds, solver: fedcgds, Q1: 10, Q2: 1, m: 50}
  - {name: sncp_gds, solver: fedcgds, sncp: true, Q1: 10, Q2: 1}
  - {name: kmeans, solver: kmeanspp}
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, text, *extra):
    cfg = write(tmp_path, text)
    out = tmp_path / "out"
    code = main(["run", str(cfg), "--output-dir", str(out), *extra])
    return code, out


class TestValidate:
    def test_full_style_config_is_valid(self, tmp_path, capsys):
        assert main(["validate", str(write(tmp_path, FULL_STYLE))]) == EXIT_OK
        cfg, found = load_config(write(tmp_path, FULL_STYLE))
        assert found == []
        assert [a.name for a in cfg.algorithms] == ["fedcavg", "fedcgds", "sncp_gds", "kmeans"]

    def test_lists_every_problem_with_lines(self, tmp_path, capsys):
        text = FULL_STYLE.replace("m: 50}", "m: 150}").replace(
            "{name: fedcavg, solver: fedcavg, Q1: 10, Q2: 1}",
            "{name: fedcavg, solver: fedcavg, Q1: 10, Q2: 1, step_rule_H: theorem, gamma: 1}",
        ).replace("trials: 10", "trials: 0")
        code = main(["validate", str(write(tmp_path, text))])
        assert code == EXIT_INVALID
        err = capsys.readouterr().err
        assert "3 problem(s)" in err
        assert "line 5: trials" in err
        assert "line 8:" in err and "gamma" in err
        assert "line 9:" in err and "participation exceeds client count" in err

    def test_violations_are_data(self, tmp_path):
        text = FULL_STYLE.replace("m: 50}", "m: 101}")
        cfg, found = load_config(write(tmp_path, text))
        assert cfg is None
        assert len(found) == 1 and found[0].line == 9
        assert "participation exceeds client count" in found[0].message

    def test_unknown_keys_and_syntax(self, tmp_path, capsys):
        assert main(["validate", str(write(tmp_path, FULL_STYLE + "extra: 1\n"))]) == EXIT_INVALID
        assert "unknown key 'extra'" in capsys.readouterr().err
        assert main(["validate", str(write(tmp_path, "a: [1,\n b: 2"))]) == EXIT_INVALID
        assert "YAML syntax error" in capsys.readouterr().err

    def test_missing_file_is_io_error(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.yaml")]) == EXIT_IO
        assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_IO

    def test_missing_data_file_is_io_error(self, tmp_path):
        text = SMALL.format(trials=1).replace(
            "synthetic: {M: 8, N: 60, K: 3, snr_db: -3.0, seed: 2}",
            "file: missing.fmc\n  K: 3",
        )
        code, _ = run(tmp_path, text)
        assert code == EXIT_IO


class TestRun:
    def test_two_algorithms_two_mean_files(self, tmp_path):
        code, out = run(tmp_path, SMALL.format(trials=2))
        assert code == EXIT_OK
        assert sorted(p.parent.name for p in out.glob("*/mean.csv")) == ["avg", "gds"]
        assert len(list(out.glob("*/trial_*.csv"))) == 4
        assert len(read_csv(out / "summary.csv")) == 4

    def test_bit_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir()
        b.mkdir()
        assert run(a, SMALL.format(trials=2))[0] == EXIT_OK
        assert run(b, SMALL.format(trials=2))[0] == EXIT_OK
        files = sorted(p.relative_to(a / "out") for p in (a / "out").rglob("*.csv"))
        assert files
        for f in files:
            assert (a / "out" / f).read_bytes() == (b / "out" / f).read_bytes()

    def test_seed_base_changes_output(self, tmp_path):
        _, out = run(tmp_path, SMALL.format(trials=1), "--seed-base", "7")
        rows = read_csv(out / "summary.csv")
        assert {r["seed"] for r in rows} == {"7"}

    def test_trials_override(self, tmp_path):
        code, out = run(tmp_path, SMALL.format(trials=5), "--trials-override", "2")
        assert code == EXIT_OK
        assert len(list((out / "avg").glob("trial_*.csv"))) == 2
        assert main(["run", str(tmp_path / "cfg.yaml"), "--trials-override", "0"]) == EXIT_INVALID

    def test_cum_uplink_is_closed_form(self, tmp_path):
        _, out = run(tmp_path, SMALL.format(trials=2))
        for name, solver, m in [("avg", "fedcavg", 4), ("gds", "fedcgds", 2)]:
            files = list((out / name).glob("trial_*.csv")) + [out / name / "mean.csv"]
            for f in files:
                for row in read_csv(f):
                    s = int(row["round"])
                    assert int(row["cum_uplink"]) == closed_form_cost(solver, 8, 3, m, s)

    def test_mean_and_std_match_recomputation(self, tmp_path):
        # eps_stop large enough that trials stop at different rounds
        text = SMALL.format(trials=4).replace("eps_stop: 1.0e-12", "eps_stop: 1.5e-2").replace("S_max: 15", "S_max: 30")
        _, out = run(tmp_path, text)
        for name in ("avg", "gds"):
            trials = [read_csv(f) for f in sorted((out / name).glob("trial_*.csv"))]
            assert len({len(t) for t in trials}) > 1
            means = read_csv(out / name / "mean.csv")
            assert len(means) == max(len(t) for t in trials)
            for i, row in enumerate(means):
                picked = [t[min(i, len(t) - 1)] for t in trials]
                F = [float(r["F"]) for r in picked]
                acc = [float(r["accuracy"]) for r in picked]
                assert float(row["mean_F"]) == pytest.approx(statistics.fmean(F), rel=1e-12)
                assert float(row["std_F"]) == pytest.approx(statistics.pstdev(F), rel=1e-12, abs=1e-15)
                assert float(row["mean_accuracy"]) == pytest.approx(statistics.fmean(acc), rel=1e-12)

    def test_trace_columns(self, tmp_path):
        _, out = run(tmp_path, SMALL.format(trials=1))
        with open(out / "avg" / "trial_000.csv", newline="") as fh:
            header = next(csv.reader(fh))
        assert header == ["round", "F", "eps", "cum_uplink", "accuracy"]
        rows = read_csv(out / "avg" / "trial_000.csv")
        assert [int(r["round"]) for r in rows] == list(range(1, len(rows) + 1))
        assert math.isinf(float(rows[0]["eps"]))

    def test_exact_fit_reaches_zero(self, tmp_path):
        code, out = run(tmp_path, EXACT_FIT)
        assert code == EXIT_OK
        final = read_csv(out / "gds" / "mean.csv")[-1]
        assert float(final["mean_F"]) <= 1e-8
        assert float(final["mean_accuracy"]) == 1.0

    def test_kmeans_row(self, tmp_path):
        text = SMALL.format(trials=1) + "  - {name: km, solver: kmeanspp}\n"
        _, out = run(tmp_path, text)
        rows = read_csv(out / "km" / "mean.csv")
        assert len(rows) == 1 and rows[0]["cum_uplink"] == "0"
        assert 0 < float(rows[0]["mean_accuracy"]) <= 1

    def test_module_entry_point(self, tmp_path):
        cfg = write(tmp_path, SMALL.format(trials=1))
        r = subprocess.run([sys.executable, "-m", "fedclust", "validate", str(cfg)],
                           capture_output=True, text=True)
        assert r.returncode == 0 and "valid" in r.stdout


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    cfg, found = load_config(path)
    assert found == [] and cfg is not None
