import pytest

from ecgdelin.pools import build_pool, fit_amplitude_models

from helpers import beat_corpus


@pytest.fixture(scope="session")
def corpus():
    return beat_corpus(n_records=6, seed=11)


@pytest.fixture(scope="session")
def corpus_2lead():
    return beat_corpus(n_records=4, seed=23, n_leads=2)


@pytest.fixture(scope="session")
def pool(corpus):
    return build_pool(corpus)


@pytest.fixture(scope="session")
def amplitude_model(pool):
    return fit_amplitude_models(pool)
