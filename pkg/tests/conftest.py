import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale sweeps, run with HAL_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.getenv("HAL_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set HAL_RUN_SLOW=1 to run acceptance-scale sweeps")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def d_config2():
    """Device D, drive configuration 2 preset"""
    from src.presets import get_preset
    return get_preset("D-config2")


@pytest.fixture(autouse=True)
def quiet_console(monkeypatch):
    """Keep library warnings out of test output"""
    monkeypatch.setenv("HAL_VERBOSITY", "quiet")
