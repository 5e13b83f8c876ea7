import numpy as np
import pytest

from sqalab.lattice import CouplingGraph, SpinConfiguration, TrotterSystem


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def ring3():
    return CouplingGraph.ring(3)


@pytest.fixture
def pair_system():
    """Two ferromagnetically coupled sites on two Trotter slices."""
    return TrotterSystem(CouplingGraph(2, ((0, 1, 1.0),)), 2, 1.0)


def random_system(rng, n_sites, trotter_slices, beta=1.0, alpha=0.0):
    return TrotterSystem(CouplingGraph.random(n_sites, rng), trotter_slices, beta, alpha)


def all_configurations(sys):
    for index in range(sys.n_states):
        yield SpinConfiguration(sys.n_sites, sys.trotter_slices, index)
