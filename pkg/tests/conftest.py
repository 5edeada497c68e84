from __future__ import annotations

import pytest

from egoscene.config import load_config


@pytest.fixture(scope="session")
def cfg():
    return load_config()


@pytest.fixture(scope="session")
def sim_cfg(cfg):
    return cfg.simulator
