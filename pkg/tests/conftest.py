from __future__ import annotations

import numpy as np
import pytest

from spontloc.lattice import WaveFunction, build_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def random_state(grid, rng, particle_count=1):
    dim = grid.n_sites**particle_count
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return WaveFunction.from_vector(grid, v / np.linalg.norm(v), particle_count)


def random_density(dim, rng, rank=None):
    a = rng.normal(size=(dim, rank or dim)) + 1j * rng.normal(size=(dim, rank or dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def grid16():
    return build_grid(16, 0.25)


@pytest.fixture
def grid8():
    return build_grid(8, 0.5)
