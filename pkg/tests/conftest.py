"""Session-scoped fixtures: both policies are trained once and shared.

Training runs exactly the way the CLI's train verbs do (same budgets, same
seed derivation), so the acceptance tests exercise the shipped defaults.
"""

import time

import pytest

from gridswarm import qnet
from gridswarm.cli import CONFLICT_TRAIN_DEFAULTS, FREE_TRAIN_DEFAULTS, splitmix64


@pytest.fixture(scope="session")
def conflict_training(tmp_path_factory):
    """(net, reward log, wall-clock seconds, weights path) for the conflict net."""
    config = qnet.TrainerConfig(**CONFLICT_TRAIN_DEFAULTS)
    t0 = time.time()
    net, log = qnet.train_conflict_selfplay(config, n_agents=2,
                                            seed=splitmix64(0, 2))
    elapsed = time.time() - t0
    path = tmp_path_factory.mktemp("policies") / "conflict.qnet"
    qnet.save_weights(net, path)
    return net, log, elapsed, path


@pytest.fixture(scope="session")
def free_training(tmp_path_factory):
    """(net, reward log, weights path) for the conflict-free net."""
    config = qnet.TrainerConfig(**FREE_TRAIN_DEFAULTS)
    net, log = qnet.train_free(config, seed=0)
    path = tmp_path_factory.mktemp("policies") / "free.qnet"
    qnet.save_weights(net, path)
    return net, log, path


@pytest.fixture(scope="session")
def conflict_net(conflict_training):
    return conflict_training[0]


@pytest.fixture(scope="session")
def free_net(free_training):
    return free_training[0]
