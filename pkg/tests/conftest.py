import numpy as np
import pytest

from clab.env import TrapSpec, constant, sample_iid_nn
from clab.lattice import Geometry


@pytest.fixture
def g2():
    return Geometry(2, 8)


@pytest.fixture
def uniform_small():
    return sample_iid_nn("uniform:1,2", Geometry(2, 4), 7)


@pytest.fixture
def ones2():
    return constant(Geometry(2, 16))


@pytest.fixture
def spec3():
    # 1/p + 1/q and 1/p' + 1/q' both exceed 2/(d-1) = 1
    return TrapSpec(3, 1.5, 1.5, 1.9, 1.9)


def brute_pi_nu(env):
    """pi and nu from a dense double loop over the conductance matrix."""
    g = env.geometry
    C = env.matrix().toarray()
    pi = C.sum(axis=1)
    nu = np.zeros(g.n_sites)
    for x in range(g.n_sites):
        for y in np.flatnonzero(C[x]):
            d = g.reduce(g.coords(y) - g.coords(x))
            nu[x] += C[x, y] * float(d @ d)
    return pi, nu
