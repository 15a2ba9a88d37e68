"""Session fixtures: default-budget artifacts are synthesized once and shared."""
import numpy as np
import pytest

from percabs.config import load_scenario
from percabs.partition import build_partition
from percabs.perception import sample_dataset
from percabs.synthesis import compute_abstraction, save_abstraction
from percabs.verifier import check_induction

PER_CELL = 300


def default_dataset(cfg, seed=0, envs=None, per_cell=PER_CELL):
    envs = [e.id for e in cfg.environments] if envs is None else envs
    return sample_dataset(build_partition(cfg.partition), envs, cfg.perception, per_cell, seed)


@pytest.fixture(scope="session")
def gem_cfg():
    return load_scenario("gem")


@pytest.fixture(scope="session")
def agbot_cfg():
    return load_scenario("agbot")


@pytest.fixture(scope="session")
def gem_data(gem_cfg):
    return default_dataset(gem_cfg)


@pytest.fixture(scope="session")
def gem_abst(gem_cfg, gem_data):
    return compute_abstraction(gem_cfg, gem_data)


@pytest.fixture(scope="session")
def agbot_abst(agbot_cfg):
    return compute_abstraction(agbot_cfg, default_dataset(agbot_cfg))


@pytest.fixture(scope="session")
def gem_induction(gem_abst):
    return check_induction(gem_abst)


@pytest.fixture(scope="session")
def agbot_induction(agbot_abst):
    return check_induction(agbot_abst)


@pytest.fixture(scope="session")
def gem_artifact_path(gem_abst, tmp_path_factory):
    path = tmp_path_factory.mktemp("artifacts") / "gem.json"
    save_abstraction(gem_abst, path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
