"""Session-wide fixtures: canonical corpora and models trained to the
documented budgets. Only the acceptance tests request these, so the unit
test files never pay the training cost.
"""

import time

import pytest

from durflow.data import CorpusSpec, generate
from durflow.duration import DurationModel
from durflow.training import train_model


@pytest.fixture(scope="session")
def read_spec():
    return CorpusSpec(style="read", seed=0)


@pytest.fixture(scope="session")
def read_train(read_spec):
    return generate(read_spec, "train")


@pytest.fixture(scope="session")
def read_val(read_spec):
    return generate(read_spec, "val")


@pytest.fixture(scope="session")
def spont_spec():
    return CorpusSpec(style="spont", seed=777)


@pytest.fixture(scope="session")
def spont_train(spont_spec):
    return generate(spont_spec, "train")


@pytest.fixture(scope="session")
def spont_val(spont_spec):
    return generate(spont_spec, "val")


@pytest.fixture(scope="session")
def det_read(read_train):
    """Deterministic model on read speech: 2000 steps at 1e-3, then a
    1000-step tail at 2e-4 to settle the class means. Returns the model
    plus the wall-clock training time in seconds."""
    model = DurationModel("det", read_train.spec.vocab_size, seed=0)
    start = time.perf_counter()
    train_model(model, read_train, 2000, batch_size=16, lr=1e-3, seed=0)
    train_model(model, read_train, 1000, batch_size=16, lr=2e-4, seed=50)
    return {"model": model, "train_seconds": time.perf_counter() - start}


@pytest.fixture(scope="session")
def det_spont(spont_train):
    model = DurationModel("det", spont_train.spec.vocab_size, seed=0)
    train_model(model, spont_train, 1000, batch_size=16, lr=1e-3, seed=0)
    return model


@pytest.fixture(scope="session")
def fm_spont(spont_train):
    """Flow-matching model on spontaneous speech: 4000 steps at 1e-3 plus
    a 1000-step tail at 3e-4 for cleaner transport of the wide classes."""
    model = DurationModel("fm", spont_train.spec.vocab_size, seed=0)
    train_model(model, spont_train, 4000, batch_size=16, lr=1e-3, seed=0)
    train_model(model, spont_train, 1000, batch_size=16, lr=3e-4, seed=50)
    return model
