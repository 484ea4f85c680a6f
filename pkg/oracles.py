# oracles.py
# Exhaustive-enumeration oracles and an independent reference minimiser for
# the entropy-smoothed CCCP subproblems. Only meant for small models.

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from core.errors import ConfigError, StateSpaceTooLarge
from core.model import Assignment, Marginals, Model, energy

logger = logging.getLogger(__name__)

STATE_LIMIT = 2 ** 24


# ==================================================================================
# ENUMERATION
# ==================================================================================

def _energy_tensor(cards, unaries, edges, limit=STATE_LIMIT):
    """Energy of every joint configuration as an array of shape `cards` (C order)."""
    size = int(np.prod([float(k) for k in cards])) if cards else 1
    if size > limit:
        raise StateSpaceTooLarge(size, limit)
    ndim = len(cards)
    total = np.zeros(tuple(cards))
    for axis, theta in enumerate(unaries):
        shape = [1] * ndim
        shape[axis] = cards[axis]
        total = total + np.reshape(theta, shape)
    for a, b, table in edges:
        shape = [1] * ndim
        shape[a], shape[b] = cards[a], cards[b]
        total = total + (np.reshape(table, shape) if a < b else np.reshape(np.transpose(table), shape))
    return total


def energy_tensor(model: Model, limit=STATE_LIMIT):
    return _energy_tensor(list(model.cardinalities), model.unaries,
                          [(e.i, e.j, e.table) for e in model.edges], limit)


def _node_marginal(p, axis):
    return p.sum(axis=tuple(x for x in range(p.ndim) if x != axis))


def _pair_marginal(p, a, b):
    """Marginal table over axes a < b, rows indexed by a."""
    return p.sum(axis=tuple(x for x in range(p.ndim) if x not in (a, b)))


def brute_force_map(model: Model) -> Tuple[Assignment, float]:
    """
    Lexicographically smallest minimum-energy assignment and its energy.

    Raises:
        StateSpaceTooLarge: when prod K_i exceeds 2^24
    """
    energies = energy_tensor(model)
    labels = np.unravel_index(int(np.argmin(energies)), energies.shape)
    x = Assignment.of(labels)
    return x, energy(model, x)


def _gibbs(model, temperature):
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    scaled = -energy_tensor(model) / temperature
    log_z = float(logsumexp(scaled))
    return np.exp(scaled - log_z), log_z


def brute_force_gibbs(model: Model, temperature: float) -> Marginals:
    """Exact node and edge marginals of p(x) ~ exp(-E(x) / temperature)."""
    p, _ = _gibbs(model, temperature)
    nodes = [_node_marginal(p, axis) for axis in range(model.num_nodes)]
    pairs = [_pair_marginal(p, e.i, e.j) for e in model.edges]
    return Marginals.create(nodes, pairs, model.endpoints())


def log_partition(model: Model, temperature: float) -> float:
    """log sum_x exp(-E(x) / temperature)."""
    return _gibbs(model, temperature)[1]


# ==================================================================================
# REFERENCE MINIMISER
# ==================================================================================

@dataclass
class _Slave:
    nodes: Tuple[int, ...]
    edges: Tuple[int, ...]
    unaries: List[np.ndarray]
    tables: List[np.ndarray]
    temperature: float


@dataclass
class ReferenceSolution:
    """Dual optimum (a lower bound on the subproblem) and the recovered marginals."""
    value: float
    marginals: Marginals
    disagreement: float
    success: bool
    iterations: int


def _edge_slaves(model, theta_tilde, rho):
    slaves = []
    for e, edge in enumerate(model.edges):
        d_i, d_j = model.degrees[edge.i], model.degrees[edge.j]
        slaves.append(_Slave((edge.i, edge.j), (e,),
                             [np.asarray(theta_tilde[edge.i]) / d_i, np.asarray(theta_tilde[edge.j]) / d_j],
                             [edge.table], rho))
    return slaves


def _forest_slaves(model, theta_tilde, rho, decomposition):
    node_counts = [len(t) for t in decomposition.node_trees]
    edge_counts = [len(t) for t in decomposition.edge_trees]
    return [
        _Slave(forest.nodes, forest.edges,
               [np.asarray(theta_tilde[n]) / node_counts[n] for n in forest.nodes],
               [model.edges[e].table / edge_counts[e] for e in forest.edges],
               rho * weight)
        for weight, forest in zip(decomposition.weights, decomposition.forests)
    ]


class _Consensus:
    """Variable layout: one block per copy of a node or edge held by two or more slaves."""

    def __init__(self, model, slaves):
        holders = {}
        for s, slave in enumerate(slaves):
            for node in slave.nodes:
                holders.setdefault(("node", node), []).append(s)
            for e in slave.edges:
                holders.setdefault(("edge", e), []).append(s)
        self.blocks = {}
        self.groups = []
        offset = 0
        for key in sorted(holders):
            owners = holders[key]
            if len(owners) < 2:
                continue
            kind, idx = key
            width = model.cardinalities[idx] if kind == "node" else model.edges[idx].table.size
            group = []
            for s in owners:
                self.blocks[(s, key)] = slice(offset, offset + width)
                group.append(slice(offset, offset + width))
                offset += width
            self.groups.append(group)
        self.size = offset

    def project(self, z):
        lam = z.copy()
        for group in self.groups:
            mean = np.mean([z[sl] for sl in group], axis=0)
            for sl in group:
                lam[sl] -= mean
        return lam


def _solve_slave(model, slave, s, layout, lam):
    local = {node: k for k, node in enumerate(slave.nodes)}
    cards = [model.cardinalities[n] for n in slave.nodes]
    unaries = []
    for node, theta in zip(slave.nodes, slave.unaries):
        sl = layout.blocks.get((s, ("node", node)))
        unaries.append(theta if sl is None else theta + lam[sl])
    edges = []
    for e, table in zip(slave.edges, slave.tables):
        sl = layout.blocks.get((s, ("edge", e)))
        shifted = table if sl is None else table + lam[sl].reshape(table.shape)
        edges.append((local[model.edges[e].i], local[model.edges[e].j], shifted))
    scaled = -_energy_tensor(cards, unaries, edges) / slave.temperature
    log_z = float(logsumexp(scaled))
    p = np.exp(scaled - log_z)
    nodes = {node: _node_marginal(p, k) for node, k in local.items()}
    pairs = {e: _pair_marginal(p, local[model.edges[e].i], local[model.edges[e].j]) for e in slave.edges}
    return -slave.temperature * log_z, nodes, pairs


def _isolated(theta):
    ties = np.isclose(theta, theta.min(), rtol=0.0, atol=1e-12)
    return ties / ties.sum()


def reference_minimizer(model: Model, theta_tilde, rho: float, decomposition=None,
                        gtol: float = 1e-11, max_iters: int = 20000) -> ReferenceSolution:
    """
    Independent optimum of a CCCP subproblem, through its consensus dual.

    Without `decomposition` the problem is the edge-entropy one solved by
    norm-product (single-edge slaves at temperature rho, node potentials
    theta_tilde_i / d_i, nodes without edges at their unary minimum); with a
    decomposition it is the tree-entropy one (forest slaves at temperature
    rho * eta_a). Slave partition functions come from enumeration and the
    dual is maximised with L-BFGS-B.

    Returns:
        ReferenceSolution whose value is the dual optimum and whose marginals
        are the weighted average of the slave copies
    """
    if not rho > 0:
        raise ConfigError(f"rho must be positive, got {rho}")
    if decomposition is None:
        slaves = _edge_slaves(model, theta_tilde, rho)
        weights = [1.0] * len(slaves)
    else:
        slaves = _forest_slaves(model, theta_tilde, rho, decomposition)
        weights = list(decomposition.weights)
    layout = _Consensus(model, slaves)

    def evaluate(z):
        lam = layout.project(z)
        value = 0.0
        grad = np.zeros(layout.size)
        solved = []
        for s, slave in enumerate(slaves):
            v, nodes, pairs = _solve_slave(model, slave, s, layout, lam)
            value += v
            for node, m in nodes.items():
                sl = layout.blocks.get((s, ("node", node)))
                if sl is not None:
                    grad[sl] = m
            for e, m in pairs.items():
                sl = layout.blocks.get((s, ("edge", e)))
                if sl is not None:
                    grad[sl] = m.ravel()
            solved.append((nodes, pairs))
        return value, layout.project(grad), solved

    def negative_dual(z):
        value, grad, _ = evaluate(z)
        return -value, -grad

    iterations, success = 0, True
    z = np.zeros(layout.size)
    if layout.size:
        result = optimize.minimize(negative_dual, z, jac=True, method="L-BFGS-B",
                                   options={"gtol": gtol, "ftol": 1e-15, "maxiter": max_iters,
                                            "maxcor": 30})
        z, iterations, success = result.x, int(result.nit), bool(result.success)
        if not success:
            logger.warning("reference minimiser: %s", result.message)
    value, grad, solved = evaluate(z)

    node_sum = [np.zeros(k) for k in model.cardinalities]
    node_weight = np.zeros(model.num_nodes)
    edge_sum = [np.zeros_like(e.table) for e in model.edges]
    edge_weight = np.zeros(model.num_edges)
    for w, (nodes, pairs) in zip(weights, solved):
        for node, m in nodes.items():
            node_sum[node] += w * m
            node_weight[node] += w
        for e, m in pairs.items():
            edge_sum[e] += w * m
            edge_weight[e] += w
    node_marginals = []
    for node in range(model.num_nodes):
        if node_weight[node] == 0:
            theta = np.asarray(theta_tilde[node], dtype=np.float64)
            value += float(theta.min())
            node_marginals.append(_isolated(theta))
        else:
            m = node_sum[node] / node_weight[node]
            node_marginals.append(m / m.sum())
    edge_marginals = [m / w for m, w in zip(edge_sum, edge_weight)]
    marginals = Marginals.create(node_marginals, edge_marginals, model.endpoints())
    return ReferenceSolution(value, marginals, float(np.max(np.abs(grad), initial=0.0)),
                             success, iterations)
