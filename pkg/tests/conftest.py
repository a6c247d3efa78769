import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, h=32, w=32):
    return rng.uniform(0.0, 1.0, size=(h, w, 3))


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    from amqf.data import synth_dataset

    out = tmp_path_factory.mktemp("synth")
    synth_dataset(3, ["blur", "noise"], 2, out, seed=7, size=32)
    return out
