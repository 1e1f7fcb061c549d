"""Shared fixtures: a reduced-resolution dataset and small trained models.

Unit tests run on a 101-node fine grid (solves in ~30 ms) and short Adam
trainings so the whole suite stays fast; the acceptance module builds the
full-scale artifacts itself.
"""

import numpy as np
import pytest

from capinv import fields, generative, inverse


@pytest.fixture(scope="session")
def unit_train():
    return fields.generate_dataset(np.linspace(0.1, 0.9, 40), fine_n=101)


@pytest.fixture(scope="session")
def unit_test_set():
    return fields.generate_dataset(fields.TEST_D, fine_n=101)


@pytest.fixture(scope="session")
def unit_ae(unit_train):
    config = generative.GenerativeTrainConfig(
        optimizer="adam", max_iterations=1500, minibatch_size=10, latent_dim=10, hidden_dim=64
    )
    model, history = generative.train_generative("ae", unit_train.fields, config, seed=0)
    return model, history


@pytest.fixture(scope="session")
def unit_vae(unit_train):
    config = generative.GenerativeTrainConfig(
        optimizer="adam", max_iterations=1500, minibatch_size=10, latent_dim=10, hidden_dim=64
    )
    model, history = generative.train_generative("vae", unit_train.fields, config, seed=1)
    return model, history


@pytest.fixture(scope="session")
def unit_pipelines(unit_train, unit_ae, unit_vae):
    return {
        "fullspace": inverse.fit_pipeline("fullspace", unit_train),
        "ae": inverse.fit_pipeline("latent", unit_train, model=unit_ae[0], optimizer_tag="adam"),
        "vae": inverse.fit_pipeline("latent", unit_train, model=unit_vae[0], optimizer_tag="adam"),
    }
