import numpy as np
import pytest

from promocure.model import ModelConfig, ModelParams
from promocure.simulation import ScenarioConfig, generate_dataset


@pytest.fixture(scope="session")
def sim_setting1():
    cfg = ScenarioConfig(n=300, cure_pct=25, setting=1, seed=11)
    gen = generate_dataset(cfg, np.random.default_rng(cfg.seed))
    return cfg, gen


@pytest.fixture(scope="session")
def small_data(sim_setting1):
    return sim_setting1[1].data


@pytest.fixture(scope="session")
def model_parts():
    return ModelConfig().build(25.0)


@pytest.fixture(scope="session")
def grid(model_parts):
    return model_parts[0]


@pytest.fixture(scope="session")
def penalty(model_parts):
    return model_parts[1]


def random_params(rng, K=12, p=2, q=2, phi_last=10.0):
    phi = np.append(rng.normal(-2.0, 0.5, K - 1), phi_last)
    return ModelParams(phi, rng.normal(0.5, 0.3), rng.normal(0, 0.5, p), rng.normal(0, 0.5, q))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
