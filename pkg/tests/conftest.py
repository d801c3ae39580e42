import numpy as np
import pytest

from rdepi.grid import Grid
from rdepi.model import ModelParams


def params_with(**kw) -> ModelParams:
    """ModelParams with every rate zero except the given overrides."""
    return ModelParams(**kw)


@pytest.fixture
def grid_1d() -> Grid:
    return Grid(dim=1, extent_x=1.0, nodes_x=11)


@pytest.fixture
def grid_2d() -> Grid:
    return Grid(dim=2, extent_x=2.0, nodes_x=9, extent_y=1.0, nodes_y=5)


def random_state(rng: np.random.Generator, n_nodes: int) -> np.ndarray:
    return rng.uniform(0.0, 50.0, size=(n_nodes, 9))
