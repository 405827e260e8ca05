import sys
from pathlib import Path

import pytest
import torch

# Single-threaded keeps runs deterministic and avoids thread churn on the
# tiny tensors used here.
torch.set_num_threads(1)

sys.path.insert(0, str(Path(__file__).parent))

from evpr.config import Config
from evpr.dataset import synthesize_toy_dataset
from evpr.trainer import split_from_config


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    """8 labels x 10 samples of 64x64 synthetic event data, built once."""
    root = tmp_path_factory.mktemp("toy")
    synthesize_toy_dataset(root, n_labels=8, samples_per_label=10, resolution=(64, 64), seed=0)
    return root


@pytest.fixture()
def toy_config(toy_root):
    config = Config()
    config.dataset.root = str(toy_root)
    return config.validate()


@pytest.fixture(scope="session")
def toy_samples(toy_root):
    from evpr.dataset import load_dataset

    return load_dataset(toy_root)


@pytest.fixture(scope="session")
def toy_split(toy_root, toy_samples):
    config = Config()
    config.dataset.root = str(toy_root)
    return split_from_config(toy_samples, config)
