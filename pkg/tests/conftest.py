import numpy as np
import pytest

from fedclust.data import PartitionSpec, SyntheticSpec, build_problem, gen_synthetic
from fedclust.linalg import TAG_PARTITION, make_rng
from fedclust.model import Problem


def random_problem(rng, M=5, K=3, sizes=(4, 6, 5), rho=0.0, nu=0.0, labels=False):
    blocks = [rng.standard_normal((M, n)) for n in sizes]
    labs = [rng.integers(0, K, n) for n in sizes] if labels else None
    return Problem.from_shards(blocks, K, labs, rho=rho, nu=nu)


def desk_problem(scheme="uniform_iid", seed=0, M=50, N=500, K=5, P=10, snr_db=-3.0,
                 rho=1e-8, nu=1e-10):
    data = gen_synthetic(SyntheticSpec(M, N, K, snr_db, seed))
    return build_problem(data.X, data.labels, K, PartitionSpec(scheme, P),
                         make_rng(seed, TAG_PARTITION), rho=rho, nu=nu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def iid_problem():
    return desk_problem("uniform_iid")


@pytest.fixture(scope="session")
def noniid_problem():
    return desk_problem("similarity_kmeans")


# One line per acceptance criterion, filled in by test_acceptance.py.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
