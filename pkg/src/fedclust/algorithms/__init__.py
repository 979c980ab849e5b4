from .base import (
    ConfigError,
    FedConfig,
    RunResult,
    Solver,
    drive,
    initial_state,
)
from .fedcavg import FedCAvg, run_fedcavg
from .fedcgds import FedCGds, run_fedcgds
from .fedcpalm import FedCPALM, run_fedcpalm
from .kmeans import KMeansResult, run_kmeanspp
from .palm import CentralizedPALM, run_palm_centralized
from .sncp import SncpResult, SncpSchedule, run_sncp

SOLVER_CLASSES = {
    "fedcavg": FedCAvg,
    "fedcgds": FedCGds,
    "fedcpalm": FedCPALM,
    "palm": CentralizedPALM,
}

__all__ = [
    "CentralizedPALM",
    "ConfigError",
    "FedCAvg",
    "FedCGds",
    "FedCPALM",
    "FedConfig",
    "KMeansResult",
    "RunResult",
    "SOLVER_CLASSES",
    "Solver",
    "SncpResult",
    "SncpSchedule",
    "drive",
    "initial_state",
    "run_fedcavg",
    "run_fedcgds",
    "run_fedcpalm",
    "run_kmeanspp",
    "run_palm_centralized",
    "run_sncp",
]
