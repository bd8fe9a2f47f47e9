import numpy as np
import pytest

from ciatr.core import STREAM_DATA, SeedStream
from ciatr.synthdata import ConfoundConfig, as_arrays, gen_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    """Tiny 32x32 confounded dataset: (X, y, Xt, yt)."""
    cfg = ConfoundConfig(n_per_class=4, h=32, w=32, test_per_class=6)
    train, test = gen_dataset(cfg, SeedStream(7, STREAM_DATA))
    return (*as_arrays(train), *as_arrays(test))


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
