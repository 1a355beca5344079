import numpy as np
import pytest

from navgen.config import ModelConfig, TaskConfig, WorldConfig
from navgen.model import init_params
from navgen.vocabulary import get_vocab
from navgen.world import generate_world


@pytest.fixture(scope="session")
def world_cfg():
    return WorldConfig(num_viewpoints=30, n_views=12, d_feat=16)


@pytest.fixture(scope="session")
def world(world_cfg):
    return generate_world(7, world_cfg)


@pytest.fixture(scope="session")
def big_world():
    return generate_world(3, WorldConfig(num_viewpoints=50, n_views=12, d_feat=16))


@pytest.fixture(scope="session")
def task_cfg():
    return TaskConfig(min_path_len=2, max_path_len=5, qa_num_positions=3)


@pytest.fixture(scope="session")
def model_cfg():
    return ModelConfig(d_model=32, n_layers=2, n_heads=2, fuse_layers=1, max_len=256)


@pytest.fixture(scope="session")
def vocab():
    return get_vocab()


@pytest.fixture(scope="session")
def params(model_cfg, world_cfg, vocab):
    return init_params(5, model_cfg, world_cfg.d_feat, len(vocab))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
