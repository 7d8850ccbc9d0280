import numpy as np
import pytest

from unidad.config import TrainConfig
from unidad.datasets import make_benchmark
from unidad.diffusion import build_schedule
from unidad.training import pretrain_source


@pytest.fixture(scope="session")
def schedule():
    return build_schedule(1000)


@pytest.fixture(scope="session")
def close_bench():
    return make_benchmark("close")


@pytest.fixture(scope="session")
def distant_bench():
    return make_benchmark("distant")


@pytest.fixture(scope="session")
def source_teacher(close_bench):
    """The default-config source teacher (seed 0).  Both benchmarks share the source ring."""
    return pretrain_source(TrainConfig(seed=0), close_bench)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import gate
    if gate.LINES:
        terminalreporter.section("acceptance criteria")
        for line in gate.summary():
            terminalreporter.write_line(line)
