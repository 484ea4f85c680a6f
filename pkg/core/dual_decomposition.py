# core/dual_decomposition.py
# Tree-weighting CCCP subproblem: exact sum-product slaves coordinated by an
# accelerated gradient ascent on the smoothed consensus dual

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import networkx as nx
import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from core.cccp import CCCPResult, run_cccp
from core.decomposition import Forest, ForestDecomposition
from core.errors import ConfigError
from core.model import Marginals, Model
from core.objective import CLAMP_FLOOR, PenaltyKind, tree_subproblem_objective

logger = logging.getLogger(__name__)

BACKTRACK = 0.5
EXPAND = 1.25
MIN_STEP = 1e-16


# ==================================================================================
# SLAVES
# ==================================================================================

@dataclass(frozen=True, eq=False)
class SlaveProblem:
    """
    One forest of the decomposition with its share of the potentials.

    adjusted_unaries[n] belongs to forest.nodes[n] and equals
    theta_tilde_i / |A(i)|; adjusted_pairwise[m] belongs to forest.edges[m]
    and equals theta_ij / |A(i, j)|. Energies are divided by `temperature`.
    """
    forest: Forest
    endpoints: Tuple[Tuple[int, int], ...]
    adjusted_unaries: Tuple[np.ndarray, ...]
    adjusted_pairwise: Tuple[np.ndarray, ...]
    temperature: float

    def shifted(self, node_shifts, edge_shifts):
        """Copy with multipliers added to the node and edge potentials."""
        return SlaveProblem(
            self.forest, self.endpoints,
            tuple(u + s for u, s in zip(self.adjusted_unaries, node_shifts)),
            tuple(p + s for p, s in zip(self.adjusted_pairwise, edge_shifts)),
            self.temperature,
        )


@dataclass(frozen=True, eq=False)
class SlaveSolution:
    """Exact Gibbs marginals of a slave, keyed by node id and by model edge index."""
    node_marginals: Dict[int, np.ndarray]
    edge_marginals: Dict[int, np.ndarray]
    log_partition: float

    def value(self, temperature):
        """Optimal slave objective: -T log Z."""
        return -temperature * self.log_partition


def build_slaves(model: Model, theta_tilde, decomposition: ForestDecomposition,
                 rho: float) -> List[SlaveProblem]:
    """Split theta_tilde and theta over the forests; forest a runs at temperature rho * eta_a."""
    node_counts = [len(trees) for trees in decomposition.node_trees]
    edge_counts = [len(trees) for trees in decomposition.edge_trees]
    slaves = []
    for weight, forest in zip(decomposition.weights, decomposition.forests):
        slaves.append(SlaveProblem(
            forest,
            tuple(model.endpoints()[e] for e in forest.edges),
            tuple(np.asarray(theta_tilde[n], dtype=np.float64) / node_counts[n] for n in forest.nodes),
            tuple(model.edges[e].table / edge_counts[e] for e in forest.edges),
            rho * weight,
        ))
    return slaves


@lru_cache(maxsize=256)
def _traversal(forest: Forest, endpoints):
    """Per component: root (lowest node), DFS preorder and parent edge of each node."""
    graph = nx.Graph()
    graph.add_nodes_from(forest.nodes)
    for m, (i, j) in enumerate(endpoints):
        graph.add_edge(i, j, slot=m)
    components = []
    for component in sorted(nx.connected_components(graph), key=min):
        root = min(component)
        order = list(nx.dfs_preorder_nodes(graph, root))
        parents = {child: (parent, graph.edges[parent, child]["slot"])
                   for child, parent in nx.dfs_predecessors(graph, root).items()}
        components.append((root, order, parents))
    return components


def _pair_table(slave, slot, parent, child):
    """Scaled table with rows indexed by `parent`."""
    table = slave.adjusted_pairwise[slot] / slave.temperature
    return table if slave.endpoints[slot][0] == parent else table.T


def slave_solve(slave: SlaveProblem) -> SlaveSolution:
    """
    Exact node and edge marginals of p(x) ~ exp(-E_a(x) / T) on a forest by
    two-pass sum-product in the log domain, plus log Z.
    """
    if not slave.temperature > 0:
        raise ConfigError(f"slave temperature must be positive, got {slave.temperature}")
    position = {node: n for n, node in enumerate(slave.forest.nodes)}
    local = {node: -slave.adjusted_unaries[n] / slave.temperature
             for node, n in position.items()}

    node_marginals, edge_marginals = {}, {}
    log_partition = 0.0
    for root, order, parents in _traversal(slave.forest, slave.endpoints):
        inward = {node: local[node].copy() for node in order}
        up = {}
        for child in reversed(order[1:]):
            parent, slot = parents[child]
            table = _pair_table(slave, slot, parent, child)
            up[child] = logsumexp(inward[child][None, :] - table, axis=1)
            inward[parent] = inward[parent] + up[child]
        log_partition += float(logsumexp(inward[root]))

        down = {root: np.zeros_like(local[root])}
        for child in order[1:]:
            parent, slot = parents[child]
            table = _pair_table(slave, slot, parent, child)
            outside = inward[parent] + down[parent] - up[child]
            down[child] = logsumexp(outside[:, None] - table, axis=0)
            joint = outside[:, None] - table + inward[child][None, :]
            joint = np.exp(joint - logsumexp(joint))
            e = slave.forest.edges[slot]
            edge_marginals[e] = joint if slave.endpoints[slot][0] == parent else joint.T
        for node in order:
            belief = inward[node] + down[node]
            node_marginals[node] = np.exp(belief - logsumexp(belief))
    return SlaveSolution(node_marginals, edge_marginals, log_partition)


def splitting_residual(model: Model, theta_tilde, slaves: List[SlaveProblem]) -> float:
    """Largest deviation between the summed slave potentials and theta_tilde / theta."""
    unaries = [np.zeros(k) for k in model.cardinalities]
    pairwise = [np.zeros_like(edge.table) for edge in model.edges]
    for slave in slaves:
        for node, u in zip(slave.forest.nodes, slave.adjusted_unaries):
            unaries[node] += u
        for e, p in zip(slave.forest.edges, slave.adjusted_pairwise):
            pairwise[e] += p
    gaps = [np.max(np.abs(u - np.asarray(t)), initial=0.0) for u, t in zip(unaries, theta_tilde)]
    gaps += [np.max(np.abs(p - edge.table), initial=0.0) for p, edge in zip(pairwise, model.edges)]
    return float(max(gaps, default=0.0))


# ==================================================================================
# CONSENSUS DUAL
# ==================================================================================

class DualLayout:
    """
    Flat layout of the agreement multipliers: one block per copy of a node
    (or edge) that is shared by two or more forests.
    """

    def __init__(self, model: Model, decomposition: ForestDecomposition):
        self.decomposition = decomposition
        self.node_slices: Dict[Tuple[int, int], slice] = {}
        self.edge_slices: Dict[Tuple[int, int], slice] = {}
        groups = []
        offset = 0
        for node, trees in enumerate(decomposition.node_trees):
            if len(trees) < 2:
                continue
            k = model.cardinalities[node]
            group = []
            for a in trees:
                self.node_slices[(a, node)] = slice(offset, offset + k)
                group.append(offset)
                offset += k
            groups.append((group, k))
        for e, trees in enumerate(decomposition.edge_trees):
            if len(trees) < 2:
                continue
            size = model.edges[e].table.size
            group = []
            for a in trees:
                self.edge_slices[(a, e)] = slice(offset, offset + size)
                group.append(offset)
                offset += size
            groups.append((group, size))
        self.size = offset

        # group-mean operator: (M x)[p] is the mean of x over the copies of p
        rows, cols, vals = [], [], []
        for starts, width in groups:
            for p in starts:
                for q in starts:
                    for k in range(width):
                        rows.append(p + k)
                        cols.append(q + k)
                        vals.append(1.0 / len(starts))
        self.group_mean = sparse.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    def project(self, vector):
        """Orthogonal projection onto the zero-sum subspace."""
        return vector - self.group_mean @ vector

    def flatten(self, solutions: List[SlaveSolution]):
        vector = np.zeros(self.size)
        for (a, node), sl in self.node_slices.items():
            vector[sl] = solutions[a].node_marginals[node]
        for (a, e), sl in self.edge_slices.items():
            vector[sl] = solutions[a].edge_marginals[e].ravel()
        return vector

    def shifts(self, model, forest_index, forest, multipliers):
        node_shifts = []
        for node in forest.nodes:
            sl = self.node_slices.get((forest_index, node))
            node_shifts.append(0.0 if sl is None else multipliers[sl])
        edge_shifts = []
        for e in forest.edges:
            sl = self.edge_slices.get((forest_index, e))
            edge_shifts.append(0.0 if sl is None else multipliers[sl].reshape(model.edges[e].table.shape))
        return node_shifts, edge_shifts


@dataclass(frozen=True, eq=False)
class DualState:
    """Agreement multipliers (flat, zero-sum per shared variable) and the step size."""
    multipliers: np.ndarray
    step: float

    @classmethod
    def initial(cls, layout: DualLayout, rho: float):
        decomposition = layout.decomposition
        step = rho * min(decomposition.weights) / len(decomposition)
        return cls(np.zeros(layout.size), step)


@dataclass(frozen=True, eq=False)
class DualSolveReport:
    """Outcome of dd_solve: primal average, final dual state and the dual trace."""
    marginals: Marginals
    dual: DualState
    iterations: int
    final_residual: float
    converged: bool
    dual_value: float
    best_dual_values: Tuple[float, ...]
    primal_value: float

    @property
    def warm_state(self):
        return self.dual


@lru_cache(maxsize=32)
def dual_layout(model: Model, decomposition: ForestDecomposition) -> DualLayout:
    return DualLayout(model, decomposition)


class _DualOracle:
    """Dual value and projected gradient, one slave solve per forest."""

    def __init__(self, model, layout, slaves):
        self.model = model
        self.layout = layout
        self.slaves = slaves
        self.evaluations = 0

    def __call__(self, multipliers):
        self.evaluations += 1
        solutions = []
        value = 0.0
        for a, slave in enumerate(self.slaves):
            node_shifts, edge_shifts = self.layout.shifts(self.model, a, slave.forest, multipliers)
            solution = slave_solve(slave.shifted(node_shifts, edge_shifts))
            value += solution.value(slave.temperature)
            solutions.append(solution)
        gradient = self.layout.project(self.layout.flatten(solutions))
        return value, gradient, solutions


def _primal_average(model, decomposition, solutions, floor):
    weights = decomposition.weights
    nodes = []
    for node, trees in enumerate(decomposition.node_trees):
        total = sum(weights[a] for a in trees)
        mu = sum(weights[a] * solutions[a].node_marginals[node] for a in trees) / total
        mu = np.maximum(mu, floor)
        nodes.append(mu / mu.sum())
    pairs = []
    for e, trees in enumerate(decomposition.edge_trees):
        total = sum(weights[a] for a in trees)
        mu = sum(weights[a] * solutions[a].edge_marginals[e] for a in trees) / total
        mu = np.maximum(mu, floor)
        pairs.append(mu / mu.sum())
    return Marginals.create(nodes, pairs, model.endpoints())


def dd_solve(model: Model, theta_tilde, decomposition: ForestDecomposition, rho: float,
             tol: float = 1e-8, max_iters: int = 500, warm: Optional[DualState] = None,
             floor: float = CLAMP_FLOOR) -> DualSolveReport:
    """
    Maximise the smoothed consensus dual
        lambda -> sum_a min_nu [s_a(nu) + <lambda^a, nu>]
    over zero-sum multipliers by accelerated gradient ascent with
    backtracking, step expansion and a momentum restart whenever the dual
    value drops. Stops once the slave copies of every shared variable agree
    to within `tol` (max norm). Returns the eta-weighted average of the slave
    marginals as primal solution.
    """
    if not rho > 0:
        raise ConfigError(f"dual decomposition needs rho > 0, got {rho}")
    layout = dual_layout(model, decomposition)
    slaves = build_slaves(model, theta_tilde, decomposition, rho)
    oracle = _DualOracle(model, layout, slaves)
    state = warm if warm is not None and warm.multipliers.shape == (layout.size,) \
        else DualState.initial(layout, rho)

    x = layout.project(state.multipliers)
    step = state.step
    value, gradient, solutions = oracle(x)
    residual = float(np.max(np.abs(gradient), initial=0.0))
    best = [value]
    iterations = 0
    converged = residual <= tol
    x_old, t_old = x, 1.0

    while not converged and iterations < max_iters:
        iterations += 1
        t = 0.5 + 0.5 * np.sqrt(1.0 + 4.0 * t_old ** 2)
        y = x + ((t_old - 1.0) / t) * (x - x_old)
        y_value, y_gradient, _ = oracle(y) if iterations > 1 and t_old > 1.0 else (value, gradient, None)
        grad_sq = float(y_gradient @ y_gradient)
        while True:
            candidate = y + step * y_gradient
            c_value, c_gradient, c_solutions = oracle(candidate)
            if c_value >= y_value + 0.5 * step * grad_sq - 1e-12 * (1.0 + abs(y_value)):
                break
            if step < MIN_STEP:
                logger.warning("dual step fell below %.1e; accepting the last candidate", MIN_STEP)
                break
            step *= BACKTRACK

        if c_value < value:
            # momentum restart
            t = 1.0
        x_old, x, t_old = x, candidate, t
        value, gradient, solutions = c_value, c_gradient, c_solutions
        best.append(max(best[-1], value))
        residual = float(np.max(np.abs(gradient), initial=0.0))
        converged = residual <= tol
        step *= EXPAND

    if not converged:
        logger.warning("dual decomposition stopped after %d iterations with disagreement %.3e",
                       iterations, residual)
    else:
        logger.debug("dual decomposition converged in %d iterations (%d slave rounds)",
                     iterations, oracle.evaluations)

    marginals = _primal_average(model, decomposition, solutions, floor)
    primal = tree_subproblem_objective(model, theta_tilde, rho, marginals, decomposition)
    return DualSolveReport(marginals, DualState(x, step), iterations, residual, converged,
                           value, tuple(best), primal)


def cccp_tree(model: Model, rho: float, mu_init: Marginals, decomposition: ForestDecomposition,
              eps_dc: float = 1e-4, inner_tol: float = 1e-8, max_dc_iters: int = 200,
              warm: Optional[DualState] = None, inner_max_iters: int = 500,
              floor: float = CLAMP_FLOOR, on_step=None) -> CCCPResult:
    """
    CCCP for the tree-weighting objective at fixed rho; the multipliers are
    carried from one convex step to the next.
    """
    if not rho > 0:
        raise ConfigError(f"CCCP needs rho > 0, got {rho}")

    def inner(theta_tilde, dual):
        return dd_solve(model, theta_tilde, decomposition, rho, inner_tol,
                        inner_max_iters, dual, floor)

    return run_cccp(model, rho, mu_init, PenaltyKind.tree(decomposition), inner, eps_dc,
                    max_dc_iters, warm, floor, on_step)
