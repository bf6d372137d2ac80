import numpy as np
import pytest

from lifecount.synth import CountDistribution, DomainSpec, generate_domain


def tiny_spec(name="tiny", mean=6.0, seed=7, n_train=10, n_test=5, size=(32, 32)):
    return DomainSpec(
        name=name,
        count_distribution=CountDistribution("poisson", mean=mean),
        image_size=size,
        n_train=n_train,
        n_test=n_test,
        seed=seed,
    )


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_domain(tiny_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
