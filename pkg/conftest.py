"""
The MIT License (MIT)

Copyright (c) 2026 digflow contributors
"""

import pytest

import digflow


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run toy-scale training reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return

    skip_slow = pytest.mark.skip(reason="needs --run-slow")

    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_task():
    return digflow.TaskSpec(latent_dim=2, tokens=4, feature_dim=4, horizon=2, action_dim=2, hidden=8, seed=3)


@pytest.fixture(scope="session")
def shortcut_task():
    return digflow.TaskSpec(
        latent_dim=2, tokens=4, feature_dim=4, horizon=2, action_dim=2, hidden=8, seed=3, shortcut_fraction=0.3
    )


@pytest.fixture(scope="session")
def tiny_config():
    return digflow.TrainConfig(steps=6, batch_size=4, seed=11, width=8, log_every=2)


@pytest.fixture(scope="module")
def trained(tiny_task, tiny_config):
    state, log = digflow.train(tiny_config, tiny_task)

    yield state, log
