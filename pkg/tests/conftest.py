import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gossip_langevin import rng
from gossip_langevin.models import GaussianMixtureTiedMeans, LogisticRegressionModel, gm_generate, partition_equal
from gossip_langevin.topology import build_ring

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

REPO = Path(__file__).resolve().parents[1]
MAGIC = Path(os.environ.get("GOSSIP_LANGEVIN_DATA", REPO / "data")) / "magic04.data"


@pytest.fixture
def ring5():
    return build_ring(5)


@pytest.fixture(scope="session")
def gm_model():
    x = gm_generate(rng.stream(0, "data"))
    return GaussianMixtureTiedMeans.from_partition(x, partition_equal(100, 5, rng.stream(0, "partition")))


@pytest.fixture(scope="session")
def lr_model():
    r = np.random.default_rng(3)
    x = r.standard_normal((60, 4))
    y = np.where(x @ np.array([1.0, -2.0, 0.5, 0.0]) + 0.3 * r.standard_normal(60) > 0, 1.0, -1.0)
    shards = partition_equal(60, 5, np.random.default_rng(4))
    return LogisticRegressionModel.from_partition(x, y, shards, prior_variance=10.0)


@pytest.fixture(scope="session")
def magic_path():
    if not MAGIC.exists():
        pytest.skip(f"MAGIC data not available at {MAGIC}")
    return MAGIC


VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[VERDICTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line, then assert."""

    def _verdict(number: int, title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} {number}: {title} -- {detail}"
        request.config.stash[VERDICTS].append(line)
        print(line)
        assert ok, line

    return _verdict
