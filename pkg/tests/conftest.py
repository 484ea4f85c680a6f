import numpy as np
import pytest

from core.model import Model


def random_model(rng, num_nodes, edges, states=(2, 3), scale=1.0):
    """Model with U(-scale, scale) potentials and cardinalities drawn from `states`."""
    cards = [int(rng.choice(states)) for _ in range(num_nodes)]
    unaries = [rng.uniform(-scale, scale, size=k) for k in cards]
    tables = [(i, j, rng.uniform(-scale, scale, size=(cards[i], cards[j]))) for i, j in edges]
    return Model.create(cards, unaries, tables)


def random_tree_edges(rng, num_nodes):
    return [(int(rng.integers(k)), k) for k in range(1, num_nodes)]


def chain_edges(num_nodes):
    return [(k, k + 1) for k in range(num_nodes - 1)]


CYCLE4 = [(0, 1), (1, 2), (2, 3), (0, 3)]


def random_simplex(rng, k):
    return rng.dirichlet(np.ones(k))


@pytest.fixture
def attractive_pair():
    """theta_i = [0, 0.1], theta_12 = -identity: MAP (0, 0) with energy -1."""
    return Model.create([2, 2], [[0.0, 0.1], [0.0, 0.1]], [(0, 1, [[-1.0, 0.0], [0.0, -1.0]])])


@pytest.fixture
def repulsive_edge():
    """Zero unaries, theta_12 = [[0, 1], [1, 0]]."""
    return Model.create([2, 2], [[0.0, 0.0], [0.0, 0.0]], [(0, 1, [[0.0, 1.0], [1.0, 0.0]])])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
