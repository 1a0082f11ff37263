import numpy as np
import pytest

from gems import DataConfig, ModelConfig, RunConfig, ToyModel, Vocab


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_data_config():
    return DataConfig(users=12, items=110, interactions_per_user=6,
                      history_len=4, gen_pairs=8)


@pytest.fixture
def small_vocab(small_data_config):
    return Vocab(small_data_config)


@pytest.fixture
def tiny_model(small_vocab):
    cfg = ModelConfig(vocab_size=small_vocab.size, d_model=8, n_heads=2,
                      n_blocks=2, ctx_len=48)
    return ToyModel(cfg, np.random.default_rng(7))


@pytest.fixture
def quick_run_config():
    # fast end-to-end config: small corpus, few steps
    return RunConfig(seed=11, steps=6, users=12, interactions_per_user=6,
                     items=110, d_model=16, rank=4, gen_pairs=8,
                     pretrain_steps=4, refresh_every=3, ctx_len=48,
                     history_len=4)
