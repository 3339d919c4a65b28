import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running (trains models)")


@pytest.fixture(scope="session")
def small_seq():
    """A short moving-subject clip at 32x32."""
    from geoman.data import DataConfig, make_sequence

    cfg = DataConfig(height=32, width=32, frames_eval_subject=6, frames_eval_camera=5)
    return make_sequence(cfg, "eval", 0)


@pytest.fixture(scope="session")
def small_cam_seq():
    from geoman.data import DataConfig, make_sequence

    cfg = DataConfig(height=32, width=32, frames_eval_subject=6, frames_eval_camera=5)
    return make_sequence(cfg, "eval", 1)
