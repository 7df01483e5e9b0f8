import numpy as np
import pytest

from latentspoof.data import DatasetSpec, generate, split_unseen
from latentspoof.encoder import TrainConfig


@pytest.fixture
def tiny_spec():
    return DatasetSpec(input_dim=6, n_families=3, samples_per_family=40, n_bonafide=80, train_families=(1, 2))


@pytest.fixture
def tiny_split(tiny_spec):
    return split_unseen(generate(tiny_spec), tiny_spec)


@pytest.fixture
def tiny_cfg():
    return TrainConfig(K=3, embed_dim=4, hidden=(8,), epochs=2, batch_size=32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
