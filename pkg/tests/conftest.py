import numpy as np
import pytest

from besqmkv import GSpec, InitialLaw, ModelSpec, PhiSpec


def make_spec(delta=0.1, phi=1.0, x0=1.0, g=2.0):
    phi_spec = phi if isinstance(phi, PhiSpec) else PhiSpec.constant(phi)
    return ModelSpec(delta, phi_spec, GSpec.constant(g), InitialLaw.point(x0))


@pytest.fixture
def case_study():
    """delta = 0.1, phi = 1, g = 2, lambda = point mass at 1."""
    return make_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
