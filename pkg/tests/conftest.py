import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from recedit.backbones import TrainConfig, train_backbone
from recedit.data import apply_k_core, split_train_test
from recedit.synthetic import SyntheticSpec, generate


@pytest.fixture(scope="session")
def synth_pipeline():
    """Default synthetic dataset, k-cored and split, shared across tests."""
    dataset = apply_k_core(generate(SyntheticSpec()), 1)
    split = split_train_test(dataset, 0.8, seed=0)
    return dataset, split


def _timed_train(dataset, split, backbone):
    start = time.perf_counter()
    model, losses = train_backbone(dataset.n_users, dataset.n_items,
                                   split.train_positives, backbone,
                                   TrainConfig(seed=0))
    return model, losses, time.perf_counter() - start


@pytest.fixture(scope="session")
def mf_model(synth_pipeline):
    """(model, losses, train_seconds) for the MF backbone."""
    dataset, split = synth_pipeline
    return _timed_train(dataset, split, "mf")


@pytest.fixture(scope="session")
def lightgcn_model(synth_pipeline):
    """(model, losses, train_seconds) for the graph backbone."""
    dataset, split = synth_pipeline
    return _timed_train(dataset, split, "lightgcn")
