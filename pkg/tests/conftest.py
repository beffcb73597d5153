import numpy as np
import pytest

from disac.instance import build_instance
from disac.scenario import desk_scale_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_instance():
    return build_instance(desk_scale_config(seed=0))


def random_hermitian_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    X = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return X @ X.conj().T


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
