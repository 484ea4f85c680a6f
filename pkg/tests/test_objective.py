import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CYCLE4, random_model, random_simplex, random_tree_edges
from core.decomposition import Forest, ForestDecomposition, decompose_forest
from core.errors import ModelError
from core.model import Marginals, Model, consistency_gap, lp_objective, qp_objective
from core.objective import (PenaltyKind, dc_parts, edge_kl, entropy, kl, lpqp_objective,
                            modified_unaries, penalty, tree_entropy)
from oracles import brute_force_gibbs

LOG2 = math.log(2.0)


@pytest.fixture
def correlated():
    """Single edge with perfectly correlated uniform marginals."""
    model = Model.create([2, 2], [[0.0, 0.0], [0.0, 0.0]], [(0, 1, [[0.0, 1.0], [1.0, 0.0]])])
    mu = Marginals.create([[0.5, 0.5], [0.5, 0.5]], [[[0.5, 0.0], [0.0, 0.5]]], [(0, 1)])
    return model, mu


def single_tree(model):
    forest = Forest(tuple(range(model.num_nodes)), tuple(range(model.num_edges)))
    return ForestDecomposition((forest,), (1.0,), model.num_nodes, model.num_edges)


@pytest.mark.parametrize("p, expected", [
    ([1.0, 0.0], 0.0),
    ([0.5, 0.5], LOG2),
    ([0.25] * 4, math.log(4.0)),
])
def test_entropy_examples(p, expected):
    assert entropy(p) == pytest.approx(expected, abs=1e-12)


def test_entropy_rejects_negative_entries():
    with pytest.raises(ModelError):
        entropy([1.5, -0.5])


@pytest.mark.parametrize("p, q, expected", [
    ([0.3, 0.7], [0.3, 0.7], 0.0),
    ([1.0, 0.0], [0.5, 0.5], LOG2),
    ([0.75, 0.25], [0.5, 0.5], 0.130812),
])
def test_kl_examples(p, q, expected):
    assert kl(p, q) == pytest.approx(expected, abs=1e-6)


def test_kl_edge_cases():
    assert kl([0.5, 0.5], [1.0, 0.0]) == math.inf
    with pytest.raises(ModelError):
        kl([0.5, 0.5], [1.0, 0.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6))
def test_kl_is_nonnegative(seed, k):
    rng = np.random.default_rng(seed)
    p, q = random_simplex(rng, k), random_simplex(rng, k)
    assert kl(p, q) >= -1e-12
    assert kl(p, p) == pytest.approx(0.0, abs=1e-12)


def test_penalty_examples(correlated):
    model, mu = correlated
    assert penalty(mu, PenaltyKind.uniform()) == pytest.approx(LOG2)
    assert penalty(mu, PenaltyKind.tree(single_tree(model))) == pytest.approx(LOG2)
    product = Marginals.uniform(model)
    assert penalty(product, PenaltyKind.uniform()) == 0.0


def test_lpqp_objective_examples(correlated):
    model, mu = correlated
    kind = PenaltyKind.uniform()
    assert lpqp_objective(model, mu, 0.0, kind) == lp_objective(model, mu)
    assert lpqp_objective(model, mu, 2.0, kind) == pytest.approx(lp_objective(model, mu) + 2 * LOG2)
    product = Marginals.product(model, [[0.3, 0.7], [0.9, 0.1]])
    assert lpqp_objective(model, product, 5.0, kind) == pytest.approx(qp_objective(model, product))


def test_tree_entropy_examples(correlated):
    model, mu = correlated
    forest = Forest((0, 1), (0,))
    assert tree_entropy(mu, forest) == pytest.approx(LOG2)
    vertex = Marginals.from_assignment(model, (1, 0))
    assert tree_entropy(vertex, forest) == 0.0


def test_tree_entropy_of_product_marginals(rng):
    model = random_model(rng, 6, random_tree_edges(rng, 6))
    mu = Marginals.product(model, [random_simplex(rng, k) for k in model.cardinalities])
    forest = Forest(tuple(range(6)), tuple(range(model.num_edges)))
    expected = sum(entropy(m) for m in mu.node_marginals)
    assert tree_entropy(mu, forest) == pytest.approx(expected, abs=1e-10)


def test_tree_entropy_rejects_foreign_forest(correlated):
    _, mu = correlated
    with pytest.raises(ModelError):
        tree_entropy(mu, Forest((0, 1, 2), (3,)))


def test_modified_unaries_examples():
    model = Model.create([2, 2, 2], [[0, 0]] * 3, [(0, 1, np.zeros((2, 2))), (1, 2, np.zeros((2, 2)))])
    mu = Marginals.uniform(model)
    theta = modified_unaries(model, mu, 1.0, PenaltyKind.uniform())
    np.testing.assert_allclose(theta[1], [2 * LOG2, 2 * LOG2])
    np.testing.assert_allclose(theta[0], [LOG2, LOG2])

    untouched = modified_unaries(model, mu, 0.0, PenaltyKind.uniform())
    np.testing.assert_array_equal(untouched[1], model.unaries[1])

    # node 1 in both forests, each with weight 1/2
    decomposition = ForestDecomposition(
        (Forest((0, 1), (0,)), Forest((1, 2), (1,))), (0.5, 0.5), 3, 2)
    theta = modified_unaries(model, mu, 1.0, PenaltyKind.tree(decomposition))
    np.testing.assert_allclose(theta[1], [LOG2, LOG2])


def test_modified_unaries_clamp_zero_marginals():
    model = Model.create([2, 2], [[0, 0], [0, 0]], [(0, 1, np.zeros((2, 2)))])
    mu = Marginals.from_assignment(model, (0, 0))
    theta = modified_unaries(model, mu, 1.0, PenaltyKind.uniform())
    assert np.all(np.isfinite(theta[0]))
    assert theta[0][1] == pytest.approx(-math.log(1e-12))


def test_dc_parts_examples(correlated):
    model, mu = correlated
    parts = dc_parts(model, mu, 1.0, PenaltyKind.uniform())
    lp = lp_objective(model, mu)
    assert parts.u == pytest.approx(lp - LOG2)
    assert parts.v == pytest.approx(-2 * LOG2)
    assert parts.u - parts.v == pytest.approx(lp + LOG2)
    assert abs(parts.residual) <= 1e-12

    vertex = Marginals.from_assignment(model, (0, 1))
    parts = dc_parts(model, vertex, 3.0, PenaltyKind.uniform())
    assert parts.v == 0.0
    assert parts.u == pytest.approx(lp_objective(model, vertex))


def _gibbs_marginals(seed, edges, num_nodes):
    rng = np.random.default_rng(seed)
    model = random_model(rng, num_nodes, edges, states=(2, 3))
    return model, brute_force_gibbs(model, float(rng.uniform(0.3, 3.0)))


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_kl_identity_on_consistent_marginals(seed):
    model, mu = _gibbs_marginals(seed, CYCLE4, 4)
    assert consistency_gap(mu) <= 1e-12
    for e, (i, j) in enumerate(mu.edges):
        expected = entropy(mu.node_marginals[i]) + entropy(mu.node_marginals[j]) - entropy(mu.edge_marginals[e])
        assert edge_kl(mu, e) == pytest.approx(expected, abs=1e-8)


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 10.0))
def test_dc_parts_coherence(seed, rho):
    model, mu = _gibbs_marginals(seed, CYCLE4 + [(0, 2)], 4)
    assert abs(dc_parts(model, mu, rho, PenaltyKind.uniform()).residual) <= 1e-8
    kind = PenaltyKind.tree(decompose_forest(model))
    assert abs(dc_parts(model, mu, rho, kind).residual) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_tree_and_uniform_agree_on_forests(seed):
    rng = np.random.default_rng(seed)
    model = random_model(rng, 6, random_tree_edges(rng, 6))
    mu = brute_force_gibbs(model, 1.0)
    tree = PenaltyKind.tree(single_tree(model))
    assert penalty(mu, tree) == penalty(mu, PenaltyKind.uniform())
