import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parents[1]
SCENES = ROOT / "scenes"
CONFIGS = ROOT / "configs"
sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cluster_path():
    return SCENES / "textured_cluster.json"


@pytest.fixture(scope="session")
def empty_room_path():
    return SCENES / "empty_room.json"


@pytest.fixture(scope="session")
def cluster_env(cluster_path):
    from covisplan.environment import load_scene

    return load_scene(cluster_path)


@pytest.fixture(scope="session")
def cluster_config():
    from covisplan.cli import load_config

    return load_config(CONFIGS / "textured_cluster.json")


@pytest.fixture(scope="session")
def cluster_plan(cluster_config, cluster_env):
    """Perception-aware pipeline output on the bundled textured scene."""
    from covisplan.cli import run_pipeline

    return run_pipeline(cluster_config, env=cluster_env)


@pytest.fixture(scope="session")
def cluster_baseline(cluster_config, cluster_env):
    """Same pipeline with the perception terms of the position stage switched off."""
    from covisplan.cli import run_pipeline

    return run_pipeline(cluster_config, env=cluster_env, position=cluster_config.position.perception_agnostic())


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
