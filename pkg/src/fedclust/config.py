"""Experiment configuration files (YAML) and their validation.

Schema::

    dataset:
      synthetic: {M: 50, N: 500, K: 5, snr_db: -3.0, seed: 0}
      # or instead of synthetic:
      # file: data.fmc          (binary or .csv matrix file, see fedclust.data)
      # K: 5                    (required with file)
      # seed: 0                 (partition seed, optional)
    partition: {scheme: uniform_iid, P: 10, power_law_exponent: 1.0}
    model: {rho: 1.0e-8, nu: 1.0e-10, h_constraint: nonneg}
    trials: 10
    seed_base: 0
    output_dir: out
    sncp: {rho0: 1.0e-8, factor: 1.5, trigger_eps: 2.0e-5, final_eps: 1.0e-8}
    algorithms:
      - name: gds_q10           (output sub-directory, unique)
        solver: fedcgds         (fedcavg | fedcgds | fedcpalm | palm | kmeanspp)
        sncp: false             (wrap in the penalty schedule above)
        Q1: 10                  (any FedConfig field)
      - {name: kmeans, solver: kmeanspp, max_iters: 300}

Every problem found is reported with the line it was found on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .algorithms import FedConfig, SncpSchedule
from .algorithms.base import SOLVERS
from .data import PartitionSpec, Scheme, SyntheticSpec
from .model import HConstraint, HStepRule, WStepRule

ALL_SOLVERS = SOLVERS + ("kmeanspp",)
SNCP_INNER = ("fedcavg", "fedcgds", "palm")


class ConfigFileError(Exception):
    """The config file could not be read."""


class _SyntaxProblem(Exception):
    def __init__(self, violation: "Violation"):
        self.violation = violation


@dataclass
class Violation:
    line: Optional[int]
    where: str
    message: str

    def __str__(self) -> str:
        loc = f"line {self.line}: " if self.line is not None else ""
        return f"{loc}{self.where}: {self.message}" if self.where else f"{loc}{self.message}"


@dataclass
class AlgorithmSpec:
    name: str
    solver: str
    fed: FedConfig
    sncp: bool = False
    max_iters: int = 300


@dataclass
class ModelSpec:
    rho: float = 1e-8
    nu: float = 1e-10
    h_constraint: HConstraint = HConstraint.NONNEG


@dataclass
class ExperimentConfig:
    partition: PartitionSpec
    algorithms: list[AlgorithmSpec]
    synthetic: Optional[SyntheticSpec] = None
    data_file: Optional[Path] = None
    K: int = 0
    data_seed: int = 0
    model: ModelSpec = field(default_factory=ModelSpec)
    trials: int = 1
    seed_base: int = 0
    sncp: Optional[SncpSchedule] = None
    output_dir: Path = Path("out")


# ------------------------------------------------------------------ reading

def _record_lines(node: yaml.Node, path: str, lines: dict[str, int]) -> None:
    """Remember the 1-based source line of every mapping key and list item."""
    lines.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            sub = f"{path}.{k.value}" if path else str(k.value)
            lines[sub] = k.start_mark.line + 1
            _record_lines(v, sub, lines)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _record_lines(v, f"{path}[{i}]", lines)


def read_config_file(path) -> tuple[Any, dict[str, int]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigFileError(f"cannot read {path}: {e.strerror or e}") from e
    try:
        node = yaml.compose(text)
        lines: dict[str, int] = {}
        if node is None:
            return {}, lines
        _record_lines(node, "", lines)
        data = yaml.SafeLoader("").construct_document(node)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        what = getattr(e, "problem", None) or str(e)
        raise _SyntaxProblem(Violation(line, "", f"YAML syntax error: {what}")) from e
    return data, lines


# --------------------------------------------------------------- validation

class _Checker:
    def __init__(self, lines: dict[str, int]):
        self.lines = lines
        self.found: list[Violation] = []

    @staticmethod
    def join(path: str, key) -> str:
        return f"{path}.{key}" if path else str(key)

    def bad(self, path: str, msg: str) -> None:
        # the closest enclosing entry that has a known line
        probe = path
        while probe and probe not in self.lines:
            probe = probe.rsplit(".", 1)[0] if "." in probe else ""
        self.found.append(Violation(self.lines.get(probe), path, msg))

    def mapping(self, data: dict, key: str, path: str, required: bool = True) -> dict:
        sub = self.join(path, key)
        val = data.get(key)
        if val is None:
            if required:
                self.bad(path or key, f"missing section '{key}'")
            return {}
        if not isinstance(val, dict):
            self.bad(sub, "must be a mapping")
            return {}
        return val

    def unknown(self, data: dict, allowed, path: str) -> None:
        for k in data:
            if k not in allowed:
                self.bad(self.join(path, k), f"unknown key '{k}'")

    def integer(self, data: dict, key: str, path: str, default=None, lo=None):
        sub = self.join(path, key)
        if key not in data:
            if default is None:
                self.bad(path, f"missing required key '{key}'")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.bad(sub, f"must be an integer, got {v!r}")
            return default
        if lo is not None and v < lo:
            self.bad(sub, f"must be >= {lo}, got {v}")
        return v

    def number(self, data: dict, key: str, path: str, default=None, allow_none=False):
        sub = self.join(path, key)
        if key not in data:
            if default is None and not allow_none:
                self.bad(path, f"missing required key '{key}'")
            return default
        v = data[key]
        if v is None and allow_none:
            return None
        if isinstance(v, bool):
            self.bad(sub, f"must be a number, got {v!r}")
            return default
        if isinstance(v, str):
            # YAML 1.1 reads '1e-8' (no dot) as a string
            try:
                v = float(v)
            except ValueError:
                self.bad(sub, f"must be a number, got {v!r}")
                return default
        if not isinstance(v, (int, float)) or math.isnan(v):
            self.bad(sub, f"must be a number, got {v!r}")
            return default
        return float(v)

    def choice(self, data: dict, key: str, path: str, enum_cls, default):
        if key not in data:
            return default
        try:
            return enum_cls(data[key])
        except ValueError:
            opts = ", ".join(e.value for e in enum_cls)
            self.bad(self.join(path, key), f"must be one of {opts}, got {data[key]!r}")
            return default


_FED_INT = {"Q1", "Q2", "m", "S_max", "seed"}
_FED_NUM = {"gamma", "Q_hat", "eps_stop"}


def _fed_config(chk: _Checker, entry: dict, path: str) -> FedConfig:
    kw: dict[str, Any] = {}
    for k in sorted(_FED_INT & entry.keys()):
        v = chk.integer(entry, k, path)
        if v is not None:
            kw[k] = v
    for k in sorted(_FED_NUM & entry.keys()):
        v = chk.number(entry, k, path, allow_none=True)
        if v is not None:
            kw[k] = v
    if "step_rule_H" in entry:
        kw["step_rule_H"] = chk.choice(entry, "step_rule_H", path, HStepRule, HStepRule.PRACTICAL)
    if "step_rule_W" in entry:
        kw["step_rule_W"] = chk.choice(entry, "step_rule_W", path, WStepRule, None)
    if "seed" in kw:
        chk.bad(f"{path}.seed", "per-algorithm seeds are derived from seed_base and the trial")
        kw.pop("seed")
    return FedConfig(**kw)


def parse_config(data: Any, lines: dict[str, int]) -> tuple[Optional[ExperimentConfig], list[Violation]]:
    """Build an :class:`ExperimentConfig`, collecting every violation found."""
    chk = _Checker(lines)
    if not isinstance(data, dict):
        chk.bad("", "top level must be a mapping")
        return None, chk.found
    chk.unknown(data, {"dataset", "partition", "model", "trials", "seed_base", "output_dir",
                       "sncp", "algorithms"}, "")

    ds = chk.mapping(data, "dataset", "")
    synthetic, data_file, K, data_seed = None, None, 0, 0
    if ds:
        chk.unknown(ds, {"synthetic", "file", "K", "seed"}, "dataset")
        if ("synthetic" in ds) == ("file" in ds):
            chk.bad("dataset", "give exactly one of 'synthetic' or 'file'")
        elif "synthetic" in ds:
            sy = chk.mapping(ds, "synthetic", "dataset")
            chk.unknown(sy, {"M", "N", "K", "snr_db", "seed"}, "dataset.synthetic")
            p = "dataset.synthetic"
            M = chk.integer(sy, "M", p, lo=1)
            N = chk.integer(sy, "N", p, lo=1)
            K = chk.integer(sy, "K", p, lo=1)
            snr = chk.number(sy, "snr_db", p, default=-3.0)
            data_seed = chk.integer(sy, "seed", p, default=0, lo=0)
            if None not in (M, N, K):
                synthetic = SyntheticSpec(M, N, K, snr, data_seed)
                for msg in synthetic.violations():
                    chk.bad(p, msg)
            if "K" in ds:
                chk.bad("dataset.K", "K belongs inside 'synthetic' for synthetic data")
        else:
            if not isinstance(ds["file"], str):
                chk.bad("dataset.file", "must be a path string")
            else:
                data_file = Path(ds["file"])
            K = chk.integer(ds, "K", "dataset", lo=1) or 0
            data_seed = chk.integer(ds, "seed", "dataset", default=0, lo=0)

    pa = chk.mapping(data, "partition", "", required=False)
    chk.unknown(pa, {"scheme", "P", "power_law_exponent"}, "partition")
    part = PartitionSpec(
        chk.choice(pa, "scheme", "partition", Scheme, Scheme.UNIFORM_IID),
        chk.integer(pa, "P", "partition", default=10, lo=1) if pa else 10,
        chk.number(pa, "power_law_exponent", "partition", default=1.0) if pa else 1.0,
    )
    if synthetic is not None and part.P > synthetic.N:
        chk.bad("partition.P", f"more clients ({part.P}) than samples ({synthetic.N})")

    mo = chk.mapping(data, "model", "", required=False)
    chk.unknown(mo, {"rho", "nu", "h_constraint"}, "model")
    model = ModelSpec(chk.number(mo, "rho", "model", default=1e-8),
                      chk.number(mo, "nu", "model", default=1e-10),
                      chk.choice(mo, "h_constraint", "model", HConstraint, HConstraint.NONNEG))
    if model.rho < 0 or model.nu < 0:
        chk.bad("model", "rho and nu must be non-negative")

    trials = chk.integer(data, "trials", "", default=1, lo=1)
    seed_base = chk.integer(data, "seed_base", "", default=0, lo=0)
    out = data.get("output_dir", "out")
    if not isinstance(out, str):
        chk.bad("output_dir", "must be a path string")
        out = "out"

    sncp = None
    if data.get("sncp") is not None:
        sc = chk.mapping(data, "sncp", "")
        chk.unknown(sc, {f.name for f in fields(SncpSchedule)}, "sncp")
        d = SncpSchedule()
        sncp = SncpSchedule(
            rho0=chk.number(sc, "rho0", "sncp", default=d.rho0),
            factor=chk.number(sc, "factor", "sncp", default=d.factor),
            trigger_eps=chk.number(sc, "trigger_eps", "sncp", default=d.trigger_eps),
            final_eps=chk.number(sc, "final_eps", "sncp", default=d.final_eps),
            nu=chk.number(sc, "nu", "sncp", allow_none=True),
        )
        for msg in sncp.violations():
            chk.bad("sncp", msg)

    algs: list[AlgorithmSpec] = []
    raw = data.get("algorithms")
    if not isinstance(raw, list) or not raw:
        chk.bad("algorithms", "must be a non-empty list")
        raw = []
    names = set()
    allowed = FedConfig.field_names() | {"name", "solver", "sncp", "max_iters"}
    for i, entry in enumerate(raw):
        path = f"algorithms[{i}]"
        if not isinstance(entry, dict):
            chk.bad(path, "each algorithm must be a mapping")
            continue
        chk.unknown(entry, allowed, path)
        solver = entry.get("solver")
        if solver not in ALL_SOLVERS:
            chk.bad(f"{path}.solver" if "solver" in entry else path,
                    f"solver must be one of {', '.join(ALL_SOLVERS)}, got {solver!r}")
            continue
        name = entry.get("name", solver)
        if not isinstance(name, str) or not name or "/" in name or name.startswith("."):
            chk.bad(f"{path}.name", f"invalid name {name!r}")
            continue
        if name in names:
            chk.bad(f"{path}.name", f"duplicate algorithm name {name!r}")
        names.add(name)
        fed = _fed_config(chk, entry, path)
        use_sncp = entry.get("sncp", False)
        if not isinstance(use_sncp, bool):
            chk.bad(f"{path}.sncp", "must be true or false")
            use_sncp = False
        if use_sncp:
            if sncp is None:
                chk.bad(f"{path}.sncp", "requires a top-level 'sncp' schedule")
            if solver not in SNCP_INNER:
                chk.bad(f"{path}.sncp", f"penalty schedule supports {', '.join(SNCP_INNER)} only")
        max_iters = 300
        if solver == "kmeanspp":
            max_iters = chk.integer(entry, "max_iters", path, default=300, lo=1)
        else:
            for msg in fed.violations(part.P, solver):
                chk.bad(path, msg)
        algs.append(AlgorithmSpec(name, solver, fed, use_sncp, max_iters))

    if chk.found:
        return None, chk.found
    cfg = ExperimentConfig(part, algs, synthetic, data_file, K, data_seed, model, trials,
                           seed_base, sncp, Path(out))
    return cfg, []


def load_config(path) -> tuple[Optional[ExperimentConfig], list[Violation]]:
    """Read and validate a config file. Raises :class:`ConfigFileError` if it cannot be read."""
    try:
        data, lines = read_config_file(path)
    except _SyntaxProblem as e:
        return None, [e.violation]
    cfg, found = parse_config(data, lines)
    if cfg is not None and cfg.data_file is not None and not cfg.data_file.is_absolute():
        cfg.data_file = Path(path).parent / cfg.data_file
    return cfg, found
