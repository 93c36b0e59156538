import numpy as np
import pytest

from grushin_lab import Grid, GridSpec, assemble, eigendecompose


def make_spectral(m=1, k=1, alpha=1.0, half_width=2.0, points=24, **kw):
    grid = Grid(GridSpec(m, k, alpha, half_width, points))
    op = assemble(grid)
    return grid, op, eigendecompose(op, **kw)


@pytest.fixture(scope="session")
def gp24():
    """Oracle-scale Grushin plane: small enough for dense cross-checks."""
    return make_spectral(points=24)


@pytest.fixture(scope="session")
def gp48():
    return make_spectral(points=48)


@pytest.fixture(scope="session")
def gp64():
    """The canonical configuration: m = k = 1, alpha = 1, half-width 2."""
    return make_spectral(points=64)


@pytest.fixture(scope="session")
def euclid64():
    """alpha = 0 control: the operator degenerates to the flat Laplacian."""
    return make_spectral(alpha=0.0, points=64)


def compact_bump(grid, center, width):
    center = np.asarray(center, dtype=float)

    def f(coords):
        r2 = np.sum((coords - center) ** 2, axis=1) / width**2
        capped = np.minimum(r2, 1.0 - 1e-12)
        vals = np.exp(-capped / (1.0 - capped))
        vals[r2 >= 1.0] = 0.0
        return vals

    return grid.sample(f)


def gaussian(grid, center=None, width=0.5):
    center = np.zeros(grid.spec.n) if center is None else np.asarray(center)

    def f(coords):
        return np.exp(-np.sum((coords - center) ** 2, axis=1) / (2 * width**2))

    return grid.sample(f)
