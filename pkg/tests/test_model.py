import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_model, random_simplex, random_tree_edges
from core.errors import ModelError
from core.model import (Assignment, Marginals, Model, consistency_gap, energy,
                        lp_objective, qp_objective)


@pytest.fixture
def disagree_model():
    return Model.create([2, 2], [[0.0, 1.0], [0.0, 1.0]], [(0, 1, [[0.0, 1.0], [1.0, 0.0]])])


def test_energy_examples(disagree_model, attractive_pair):
    assert energy(disagree_model, (0, 0)) == 0.0
    assert energy(disagree_model, (1, 0)) == 2.0
    assert energy(attractive_pair, Assignment.of([0, 0])) == -1.0


def test_energy_rejects_bad_assignment(disagree_model):
    with pytest.raises(ModelError):
        energy(disagree_model, (0,))
    with pytest.raises(ModelError):
        energy(disagree_model, (0, 2))


def test_reversed_edge_is_canonicalised():
    table = np.array([[0.0, 2.0, 5.0], [1.0, 3.0, 4.0]])
    forward = Model.create([3, 2], [[0, 0, 0], [0, 0]], [(1, 0, table)])
    assert (forward.edges[0].i, forward.edges[0].j) == (0, 1)
    np.testing.assert_array_equal(forward.edges[0].table, table.T)
    assert energy(forward, (2, 0)) == table[0, 2]


@pytest.mark.parametrize("edges, message", [
    ([(0, 0, np.zeros((2, 2)))], "self-loop"),
    ([(0, 1, np.zeros((2, 2))), (1, 0, np.zeros((2, 2)))], "duplicate"),
    ([(0, 1, np.zeros((2, 3)))], "shape"),
    ([(0, 1, [[0.0, np.inf], [0.0, 0.0]])], "non-finite"),
    ([(0, 5, np.zeros((2, 2)))], "missing node"),
])
def test_create_rejects_invalid_edges(edges, message):
    with pytest.raises(ModelError, match=message):
        Model.create([2, 2], [[0, 0], [0, 0]], edges)


def test_create_rejects_bad_unaries():
    with pytest.raises(ModelError):
        Model.create([2, 3], [[0, 0], [0, 0]])
    with pytest.raises(ModelError):
        Model.create([2], [[0, np.nan]])


def test_lp_objective_examples(disagree_model, attractive_pair):
    vertex = Marginals.from_assignment(attractive_pair, (0, 0))
    assert lp_objective(attractive_pair, vertex) == pytest.approx(-1.0)
    assert lp_objective(disagree_model, Marginals.uniform(disagree_model)) == pytest.approx(1.5)


def test_qp_objective_examples(attractive_pair):
    half = [np.array([0.5, 0.5])] * 2
    assert qp_objective(attractive_pair, half) == pytest.approx(-0.4)
    single = Model.create([3], [[3.0, 1.0, 2.0]])
    assert qp_objective(single, [np.array([0.2, 0.3, 0.5])]) == pytest.approx(0.6 + 0.3 + 1.0)


def test_consistency_gap_examples(attractive_pair):
    correlated = Marginals.create([[0.5, 0.5], [0.5, 0.5]], [[[0.5, 0.0], [0.0, 0.5]]], [(0, 1)])
    assert consistency_gap(correlated) == 0.0
    broken = Marginals.create([[1.0, 0.0], [0.5, 0.5]], [[[0.25, 0.25], [0.25, 0.25]]], [(0, 1)])
    assert consistency_gap(broken) == pytest.approx(0.5)


def test_marginals_must_be_normalised():
    with pytest.raises(ModelError):
        Marginals.create([[0.5, 0.6]], [], [])
    with pytest.raises(ModelError):
        Marginals.create([[1.5, -0.5]], [], [])


def test_distance_is_euclidean(attractive_pair):
    a = Marginals.uniform(attractive_pair)
    b = Marginals.from_assignment(attractive_pair, (0, 0))
    expected = np.sqrt(2 * 0.5 ** 2 + 2 * 0.5 ** 2 + 0.75 ** 2 + 3 * 0.25 ** 2)
    assert a.distance(b) == pytest.approx(expected)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 7))
def test_vertex_objectives_equal_energy(seed, num_nodes):
    rng = np.random.default_rng(seed)
    model = random_model(rng, num_nodes, random_tree_edges(rng, num_nodes), states=(2, 3, 4))
    x = [int(rng.integers(k)) for k in model.cardinalities]
    vertex = Marginals.from_assignment(model, x)
    assert lp_objective(model, vertex) == pytest.approx(energy(model, x), abs=1e-12)
    assert qp_objective(model, vertex) == pytest.approx(energy(model, x), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_product_marginals_are_consistent(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 5, [(0, 1), (1, 2), (2, 3), (0, 4), (1, 4)], states=(2, 3, 4))
    mu = Marginals.product(model, [random_simplex(rng, k) for k in model.cardinalities])
    assert consistency_gap(mu) <= 1e-12


def test_scaled_multiplies_energy(rng):
    model = random_model(rng, 4, [(0, 1), (1, 2), (2, 3)])
    x = (1, 0, 1, 0)
    assert energy(model.scaled(3.0), x) == pytest.approx(3.0 * energy(model, x))


def test_state_space_size():
    model = Model.create([2, 3, 4], [[0, 0], [0, 0, 0], [0, 0, 0, 0]])
    assert model.state_space_size() == 24
    assert list(model.degrees) == [0, 0, 0]
