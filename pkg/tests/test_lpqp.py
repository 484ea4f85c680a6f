import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from config import LpqpConfig
from conftest import random_model, random_simplex
from core.errors import ConfigError
from core.model import Marginals, Model, consistency_gap, energy, qp_objective
from core.objective import penalty
from instances import generate_potts
from lpqp import (CONVERGED, ITER_CAPPED, RHO_CAPPED, decode_argmax, default_rho0, lpqp_run,
                  penalty_kind, round_solution)
from oracles import brute_force_map


def test_round_solution_example(attractive_pair):
    half = Marginals.uniform(attractive_pair)
    x = round_solution(attractive_pair, half)
    assert tuple(x) == (0, 0)
    assert energy(attractive_pair, x) <= qp_objective(attractive_pair, half)


def test_round_solution_keeps_integral_input(rng):
    model = random_model(rng, 5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], states=(2, 3))
    x = tuple(int(rng.integers(k)) for k in model.cardinalities)
    vertex = Marginals.from_assignment(model, x)
    assert tuple(decode_argmax(vertex)) == x
    rounded = round_solution(model, vertex)
    assert energy(model, rounded) <= energy(model, x) + 1e-12


def test_round_solution_without_coupling_is_unary_argmin():
    unaries = [[0.3, -0.2, 0.1], [1.0, 0.0], [-1.0, 2.0]]
    model = Model.create([3, 2, 2], unaries, [(0, 1, np.zeros((3, 2))), (1, 2, np.zeros((2, 2)))])
    mu = Marginals.product(model, [[0.9, 0.05, 0.05], [0.5, 0.5], [0.1, 0.9]])
    assert tuple(round_solution(model, mu)) == (1, 1, 0)


@settings(max_examples=500, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 12), st.floats(0.0, 0.6))
def test_rounding_never_exceeds_the_quadratic_objective(seed, num_nodes, density):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes) if rng.random() < density]
    model = random_model(rng, num_nodes, edges, states=(2, 3, 4))
    nodes = [random_simplex(rng, k) for k in model.cardinalities]
    x = round_solution(model, nodes)
    assert energy(model, x) <= qp_objective(model, nodes) + 1e-9


def test_decode_argmax_ties_go_to_the_smallest_label():
    assert tuple(decode_argmax([np.array([0.9, 0.1]), np.array([0.5, 0.5]), np.array([0.2, 0.4, 0.4])])) == (0, 0, 1)


def test_default_rho0():
    model = Model.create([2, 2], [[0.0, 1.0], [-1.0, 0.0]], [(0, 1, [[1.0, 0.0], [0.0, -1.0]])])
    assert default_rho0(model) == pytest.approx(0.05)
    zero = Model.create([2], [[0.0, 0.0]])
    assert default_rho0(zero) == 1e-3
    assert default_rho0(model.scaled(10.0)) == pytest.approx(10 * default_rho0(model))


def test_lpqp_solves_the_attractive_pair(attractive_pair):
    result = lpqp_run(attractive_pair)
    assert tuple(result.rounded) == (0, 0)
    assert result.rounded_energy == pytest.approx(-1.0)
    assert result.rounded_energy == brute_force_map(attractive_pair)[1]


@pytest.mark.parametrize("method", ["uniform", "tree"])
def test_lpqp_with_zero_coupling_returns_unary_argmin(method):
    unaries = [[0.3, -0.2], [1.0, 0.0], [-1.0, 2.0]]
    model = Model.create([2, 2, 2], unaries, [(0, 1, np.zeros((2, 2))), (1, 2, np.zeros((2, 2)))])
    result = lpqp_run(model, LpqpConfig(method=method))
    assert tuple(result.rounded) == (1, 1, 0)
    assert result.trace.rows[0]["decoded_energy"] == pytest.approx(energy(model, (1, 1, 0)))


def test_rho_grows_by_the_factor_each_outer_iteration():
    model = generate_potts(2, 2, 0.5, 3)
    result = lpqp_run(model, LpqpConfig(rho0=0.1, rho_factor=2.0, max_outer=5, eps_rho=1e-12))
    rhos = sorted(set(result.trace.rhos))
    assert rhos == pytest.approx([0.1 * 2.0 ** k for k in range(len(rhos))])
    assert result.trace.rhos == sorted(result.trace.rhos)
    assert result.status in (ITER_CAPPED, RHO_CAPPED, CONVERGED)


def test_rho_cap_stops_the_schedule():
    model = generate_potts(2, 2, 0.5, 4)
    result = lpqp_run(model, LpqpConfig(rho0=0.1, rho_max=0.2, rho_factor=1.5, eps_rho=1e-14))
    assert result.status == RHO_CAPPED
    assert max(result.trace.rhos) == pytest.approx(0.15)


def test_outer_cap_stops_the_schedule():
    model = generate_potts(2, 2, 0.5, 5)
    result = lpqp_run(model, LpqpConfig(max_outer=1))
    assert result.status == ITER_CAPPED
    assert result.outer_iterations == 1


def test_invalid_config_is_rejected_up_front(attractive_pair):
    with pytest.raises(ConfigError):
        lpqp_run(attractive_pair, LpqpConfig(rho_factor=1.0))
    with pytest.raises(ConfigError):
        lpqp_run(attractive_pair, LpqpConfig(rho0=5.0, rho_max=1.0))
    with pytest.raises(ConfigError):
        lpqp_run(attractive_pair, LpqpConfig(method="tree", grid_split=True))


def test_tree_tolerance_never_drops_below_dd_tol():
    config = LpqpConfig(inner_tol=1e-10, inner_tol_early=1e-5, early_outer_iters=2, dd_tol=1e-6)
    assert config.tree_tol_at(1) == 1e-5
    assert config.tree_tol_at(3) == 1e-6
    assert config.inner_tol_at(3) == 1e-10
    with pytest.raises(ConfigError):
        LpqpConfig(dd_tol=0.0).validate()


def test_seed_is_echoed_and_leaves_the_run_unchanged():
    model = generate_potts(3, 2, 0.5, 8)
    a = lpqp_run(model, LpqpConfig(seed=1))
    b = lpqp_run(model, LpqpConfig(seed=99))
    assert a.config.to_dict()["seed"] == 1
    assert tuple(a.rounded) == tuple(b.rounded)
    np.testing.assert_array_equal(a.trace.to_frame(False)["lpqp_obj"], b.trace.to_frame(False)["lpqp_obj"])


def test_trace_rows_have_the_documented_columns(attractive_pair):
    result = lpqp_run(attractive_pair)
    frame = result.trace.to_frame()
    assert list(frame.columns) == ["outer", "dc_iter", "rho", "lp_obj", "penalty", "lpqp_obj",
                                   "decoded_energy", "inner_iters", "residual", "seconds"]
    assert len(frame) == len(result.trace) > 0
    np.testing.assert_allclose(frame["lpqp_obj"], frame["lp_obj"] + frame["rho"] * frame["penalty"])


def test_scaling_potentials_and_rho_keeps_the_assignment():
    model = generate_potts(3, 2, 0.5, 11)
    base = lpqp_run(model, LpqpConfig(rho0=0.05, rho_max=50.0))
    scaled = lpqp_run(model.scaled(4.0), LpqpConfig(rho0=0.2, rho_max=200.0))
    assert tuple(scaled.rounded) == tuple(base.rounded)


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("method", ["uniform", "tree"])
def test_penalty_collapses_when_converged(seed, method):
    model = generate_potts(3, 2, 0.5, seed)
    cfg = LpqpConfig(method=method, grid_split=method == "tree")
    result = lpqp_run(model, cfg)
    if result.status == CONVERGED:
        kind = penalty_kind(model, result.config)
        assert penalty(result.final_marginals, kind) <= 1e-3
        assert consistency_gap(result.final_marginals) <= 1e-4
    assert result.rounded_energy <= qp_objective(model, result.final_marginals) + 1e-9
    assert result.rounded_energy <= energy(model, result.decoded) + 1e-12


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("method", ["uniform", "tree"])
def test_penalty_collapses_on_4x4_grids(seed, method):
    model = generate_potts(4, 2, 0.5, seed)
    result = lpqp_run(model, LpqpConfig(method=method, grid_split=method == "tree"))
    if result.status == CONVERGED:
        kind = penalty_kind(model, result.config)
        assert penalty(result.final_marginals, kind) <= 1e-3
        assert consistency_gap(result.final_marginals) <= 1e-4


@pytest.mark.slow
def test_small_grid_reproduction():
    hits, never_worse = 0, True
    for seed in range(50):
        model = generate_potts(3, 2, 0.5, 1000 + seed)
        result = lpqp_run(model)
        optimum = brute_force_map(model)[1]
        hits += abs(result.rounded_energy - optimum) <= 1e-9
        bound = min(qp_objective(model, result.final_marginals), energy(model, result.decoded))
        never_worse &= result.rounded_energy <= bound + 1e-9
    assert never_worse
    assert hits / 50 >= 0.91


@pytest.mark.slow
def test_tree_and_uniform_runs_mostly_agree():
    agree = 0
    for seed in range(50):
        model = generate_potts(3, 2, 0.5, 1000 + seed)
        uniform = lpqp_run(model, LpqpConfig(method="uniform"))
        tree = lpqp_run(model, LpqpConfig(method="tree", grid_split=True))
        agree += abs(uniform.rounded_energy - tree.rounded_energy) <= 1e-9
    assert agree / 50 >= 0.8
