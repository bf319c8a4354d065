import os
import sys

import numpy as np
import pytest

# Tests assume the default kernel path unless they set the flag themselves.
os.environ.pop("MORPHEUS_DISABLE_NUMBA", None)
os.environ.pop("MORPHEUS_SCRAPE_MS", None)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cli_env():
    """Subprocess environment with kernel caches shared and flags cleared."""
    env = dict(os.environ)
    env.pop("MORPHEUS_DISABLE_NUMBA", None)
    env.pop("MORPHEUS_SCRAPE_MS", None)
    return env


@pytest.fixture(scope="session")
def python_exe():
    return sys.executable
