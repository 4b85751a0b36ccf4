import time

import numpy as np
import pytest
from hypothesis import settings

from borderlrp.network import mini_c3d
from borderlrp.synthlab import SynthConfig, TrainConfig, generate_dataset, train

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# lines printed by tests/test_acceptance.py, shown in the terminal summary
ACCEPTANCE_LINES = []

CUE_TASK = SynthConfig(cue_frames=(14, 15), noise_std=0.05, seed=7)
MOTION_TASK = SynthConfig(noise_std=0.05, seed=11)


SESSION_START = time.perf_counter()


def pytest_collection_modifyitems(items):
    # acceptance checks run last so the suite-runtime criterion sees the whole run
    items.sort(key=lambda item: item.module.__name__.endswith("test_acceptance"))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def cue_task():
    """Toy task whose label lives only in frames 14 and 15, plus trained and untrained nets."""
    data = generate_dataset(CUE_TASK, 64)
    start = mini_c3d(seed=3)
    net = train(start, data, TrainConfig(learning_rate=0.05, epochs=20, batch_size=8, seed=1))
    return data, net, start


@pytest.fixture(scope="session")
def motion_task():
    """Bar-motion task trained at step 1; returns (train set, held-out set, net)."""
    data = generate_dataset(MOTION_TASK, 64)
    held_out = generate_dataset(SynthConfig(noise_std=0.05, seed=12), 64)
    config = TrainConfig(learning_rate=0.05, epochs=15, batch_size=8, seed=1, offsets=(0, 24, 48))
    net = train(mini_c3d(seed=3), data, config)
    return data, held_out, net
