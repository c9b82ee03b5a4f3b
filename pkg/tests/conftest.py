import numpy as np
import pytest

from moncrief import SurfaceGrid, assemble_tt, build_bolza_group, derive, solve
from moncrief.solver import LinearSolver

BASE_COEFFS = np.array([1.0, 0.3, -0.5, 0.2, 0.7, -1.0])


@pytest.fixture(scope="session")
def group():
    return build_bolza_group()


@pytest.fixture(scope="session")
def coarse_grid(group):
    # smallest grid that still builds; low interpolation order keeps stencils inside
    return SurfaceGrid(group, 0.04, interp_order=4)


@pytest.fixture(scope="session")
def grid(group):
    return SurfaceGrid(group, 0.02)


@pytest.fixture(scope="session")
def unit_zz(grid):
    zz = assemble_tt(grid, BASE_COEFFS)
    return zz.scaled(1.0 / zz.sup_norm)


@pytest.fixture(scope="session")
def solved(grid, unit_zz):
    sol = solve(grid, unit_zz, linear_solver=LinearSolver())
    geo = derive(grid, unit_zz, sol)
    return sol, geo


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_disk_points(rng, n, rmax=0.9):
    r = rmax * np.sqrt(rng.uniform(size=n))
    return r * np.exp(2j * np.pi * rng.uniform(size=n))
