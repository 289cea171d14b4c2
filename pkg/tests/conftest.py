import numpy as np
import pytest

from invrisk.model.map_model import Activation, DenseLayer, Jacobian, MapMode, Network, SharedMapSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def tanh_net():
    return Network.initialize([6, 5, 3], ["tanh", "identity"], seed=3)


@pytest.fixture
def vfl_spec(tanh_net):
    return SharedMapSpec("vfl_embedding", tanh_net, cut=1)


@pytest.fixture
def hfl_spec(tanh_net):
    return SharedMapSpec("hfl_gradient", tanh_net, "cross_entropy", 1)


@pytest.fixture
def linear_jacobian():
    """
    Factory of Jacobians of linear maps F(x) = g x
    """

    def make(g) -> Jacobian:
        return Jacobian(np.asarray(g, dtype=np.float64), MapMode.VFL_EMBEDDING, "linear")

    return make


@pytest.fixture
def linear_spec():
    """
    Factory of vfl specs whose map is x -> g x
    """

    def make(g) -> SharedMapSpec:
        g = np.asarray(g, dtype=np.float64)
        network = Network([DenseLayer(g, np.zeros(g.shape[0]), Activation.IDENTITY)])
        return SharedMapSpec("vfl_embedding", network, cut=1)

    return make
