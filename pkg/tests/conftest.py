import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.core.config import build_config  # noqa: E402

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Smallest deployment that still runs every phase"""
    return build_config({
        "name": "tiny",
        "seed": 5,
        "epochs": 1,
        "grid": {"n": 4, "channels": 4, "max_concurrent_sus": 2},
        "pir": {"t": 1},
        "cluster": {"radius": 1, "tau": 2, "t_epoch_s": 3600.0},
        "consensus": {"fanout": 3},
        "population": {"dbs": 3, "anchors": 1, "groups": [{"center": [1, 1], "spread": 0, "sus": 3}]},
    })
