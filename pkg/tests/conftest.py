import numpy as np
import pytest

from kinex.kinetic1d import Equilibrium, Grid1D, uniform_density


@pytest.fixture
def grid_fine():
    """m1 = 1 working grid: [0, 20] at dx = 0.01."""
    return Grid1D.from_spacing(20.0, 0.01)


@pytest.fixture
def grid_coarse():
    return Grid1D.from_spacing(20.0, 0.05)


@pytest.fixture
def exp1(grid_fine):
    return Equilibrium(1.0).on_grid(grid_fine)


@pytest.fixture
def uniform02(grid_fine):
    return uniform_density(grid_fine, 0.0, 2.0)


def compact_random_density(grid, seed, width_fraction=0.4):
    """Random density supported on the first part of the grid (no truncation)."""
    from kinex.kinetic1d import GridDensity1D

    rng = np.random.default_rng(seed)
    values = np.zeros(grid.n_cells)
    n_support = int(grid.n_cells * width_fraction)
    values[:n_support] = rng.random(n_support) + 1e-3
    return GridDensity1D(grid, values).normalized()
