import os

import numpy as np
import pytest

from app.schemas.config import GenParams, ModelConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long acceptance runs, enabled with GMLN_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("GMLN_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set GMLN_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model_cfg():
    return ModelConfig(stages=2, base_width=16, mode="mcb", ad_enabled=True, seed=5)


@pytest.fixture
def small_gen_params():
    return GenParams(channels=3, frames=6, height=16, width=16)
