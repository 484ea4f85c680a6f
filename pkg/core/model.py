# core/model.py
# Pairwise discrete graphical models, assignments, marginals and their energies

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Tuple

import numpy as np

from core.errors import ModelError

MARGINAL_TOL = 1e-9


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Edge:
    """One undirected edge (i, j) with i < j and its K_i x K_j energy table."""
    i: int
    j: int
    table: np.ndarray

    def oriented(self, node):
        """Table with rows indexed by `node` (transposed when node == j)."""
        return self.table if node == self.i else self.table.T

    def other(self, node):
        return self.j if node == self.i else self.i


@dataclass(frozen=True, eq=False)
class Model:
    """
    Pairwise MRF with energy E(x) = sum_i theta_i(x_i) + sum_ij theta_ij(x_i, x_j).

    Use Model.create(), which canonicalises edge orientation, rather than the
    raw constructor.
    """
    cardinalities: Tuple[int, ...]
    unaries: Tuple[np.ndarray, ...]
    edges: Tuple[Edge, ...]

    @classmethod
    def create(cls, cardinalities, unaries, edges=()):
        """
        Build and validate a model.

        Args:
            cardinalities: label count K_i per node
            unaries: per-node energy vectors of length K_i
            edges: iterable of (i, j, table); (j, i, table.T) is accepted and
                   stored as (i, j, table)

        Raises:
            ModelError: on shape mismatch, self-loop, duplicate edge or a
                        non-finite potential
        """
        cards = tuple(int(k) for k in cardinalities)
        if any(k < 1 for k in cards):
            raise ModelError("every cardinality must be at least 1")
        if len(unaries) != len(cards):
            raise ModelError(f"expected {len(cards)} unary vectors, got {len(unaries)}")

        theta = []
        for node, (k, vec) in enumerate(zip(cards, unaries)):
            vec = _frozen(vec)
            if vec.shape != (k,):
                raise ModelError(f"unary of node {node} has shape {vec.shape}, expected ({k},)")
            if not np.all(np.isfinite(vec)):
                raise ModelError(f"unary of node {node} has non-finite entries")
            theta.append(vec)

        seen = set()
        canonical = []
        for i, j, table in edges:
            i, j = int(i), int(j)
            table = np.asarray(table, dtype=np.float64)
            if i == j:
                raise ModelError(f"self-loop on node {i}")
            if i > j:
                i, j, table = j, i, table.T
            if not (0 <= i and j < len(cards)):
                raise ModelError(f"edge ({i}, {j}) references a missing node")
            if (i, j) in seen:
                raise ModelError(f"duplicate edge ({i}, {j})")
            if table.shape != (cards[i], cards[j]):
                raise ModelError(
                    f"table of edge ({i}, {j}) has shape {table.shape}, "
                    f"expected ({cards[i]}, {cards[j]})"
                )
            if not np.all(np.isfinite(table)):
                raise ModelError(f"table of edge ({i}, {j}) has non-finite entries")
            seen.add((i, j))
            canonical.append((i, j, _frozen(table)))

        canonical.sort(key=lambda e: (e[0], e[1]))
        return cls(cards, tuple(theta), tuple(Edge(i, j, t) for i, j, t in canonical))

    @property
    def num_nodes(self):
        return len(self.cardinalities)

    @property
    def num_edges(self):
        return len(self.edges)

    @cached_property
    def neighbors(self):
        """Per node, the list of (neighbor, edge index) sorted by neighbor."""
        adjacency = [[] for _ in range(self.num_nodes)]
        for e, edge in enumerate(self.edges):
            adjacency[edge.i].append((edge.j, e))
            adjacency[edge.j].append((edge.i, e))
        return tuple(tuple(sorted(adj)) for adj in adjacency)

    @cached_property
    def degrees(self):
        return np.array([len(adj) for adj in self.neighbors], dtype=np.int64)

    @cached_property
    def edge_index(self):
        return {(edge.i, edge.j): e for e, edge in enumerate(self.edges)}

    def endpoints(self):
        return tuple((edge.i, edge.j) for edge in self.edges)

    def scaled(self, factor):
        """Copy with every potential multiplied by `factor`."""
        return Model.create(
            self.cardinalities,
            [factor * u for u in self.unaries],
            [(e.i, e.j, factor * e.table) for e in self.edges],
        )

    def state_space_size(self):
        return int(np.prod([float(k) for k in self.cardinalities])) if self.cardinalities else 1


@dataclass(frozen=True)
class Assignment:
    """One label per node."""
    labels: Tuple[int, ...]

    @classmethod
    def of(cls, labels):
        return cls(tuple(int(x) for x in labels))

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, node):
        return self.labels[node]

    def validate(self, model):
        if len(self.labels) != model.num_nodes:
            raise ModelError(
                f"assignment has {len(self.labels)} labels, model has {model.num_nodes} nodes"
            )
        for node, (x, k) in enumerate(zip(self.labels, model.cardinalities)):
            if not 0 <= x < k:
                raise ModelError(f"label {x} of node {node} outside [0, {k})")


@dataclass(frozen=True, eq=False)
class Marginals:
    """
    Node marginals mu_i and edge marginals mu_ij over the edges listed in
    `edges` (same order as the model's edge list).

    Each table must be nonnegative and sum to one. Marginalisation
    consistency between node and edge tables is not required here; see
    consistency_gap().
    """
    node_marginals: Tuple[np.ndarray, ...]
    edge_marginals: Tuple[np.ndarray, ...]
    edges: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        if len(self.edge_marginals) != len(self.edges):
            raise ModelError("edge marginals and edge list differ in length")
        for node, mu in enumerate(self.node_marginals):
            _check_simplex(mu, f"node {node}")
        for (i, j), mu in zip(self.edges, self.edge_marginals):
            if mu.shape != (self.node_marginals[i].shape[0], self.node_marginals[j].shape[0]):
                raise ModelError(f"edge marginal ({i}, {j}) has shape {mu.shape}")
            _check_simplex(mu, f"edge ({i}, {j})")

    @classmethod
    def create(cls, node_marginals, edge_marginals, edges):
        return cls(
            tuple(_frozen(m) for m in node_marginals),
            tuple(_frozen(m) for m in edge_marginals),
            tuple((int(i), int(j)) for i, j in edges),
        )

    @classmethod
    def uniform(cls, model):
        nodes = [np.full(k, 1.0 / k) for k in model.cardinalities]
        return cls.product(model, nodes)

    @classmethod
    def product(cls, model, node_marginals):
        """Product-form marginals: mu_ij = outer(mu_i, mu_j) on every edge."""
        nodes = [np.asarray(m, dtype=np.float64) for m in node_marginals]
        pairs = [np.outer(nodes[e.i], nodes[e.j]) for e in model.edges]
        return cls.create(nodes, pairs, model.endpoints())

    @classmethod
    def from_assignment(cls, model, assignment):
        assignment = assignment if isinstance(assignment, Assignment) else Assignment.of(assignment)
        assignment.validate(model)
        nodes = []
        for x, k in zip(assignment, model.cardinalities):
            indicator = np.zeros(k)
            indicator[x] = 1.0
            nodes.append(indicator)
        return cls.product(model, nodes)

    @property
    def num_nodes(self):
        return len(self.node_marginals)

    def flatten(self):
        """Concatenated node and edge marginal vector."""
        parts = [m.ravel() for m in self.node_marginals] + [m.ravel() for m in self.edge_marginals]
        return np.concatenate(parts) if parts else np.zeros(0)

    def distance(self, other):
        """Euclidean distance between the concatenated marginal vectors."""
        return float(np.linalg.norm(self.flatten() - other.flatten()))

    def validate(self, model):
        if self.num_nodes != model.num_nodes or self.edges != model.endpoints():
            raise ModelError("marginals do not match the model's nodes and edges")
        for node, (mu, k) in enumerate(zip(self.node_marginals, model.cardinalities)):
            if mu.shape != (k,):
                raise ModelError(f"node marginal {node} has shape {mu.shape}, expected ({k},)")


def _check_simplex(mu, where):
    if not np.all(np.isfinite(mu)) or np.any(mu < 0):
        raise ModelError(f"marginal of {where} has negative or non-finite entries")
    total = float(np.sum(mu))
    if abs(total - 1.0) > MARGINAL_TOL:
        raise ModelError(f"marginal of {where} sums to {total!r}")


# ==================================================================================
# ENERGIES AND OBJECTIVES
# ==================================================================================

def energy(model: Model, x) -> float:
    """Energy of a full assignment, summed in node order then edge order."""
    x = x if isinstance(x, Assignment) else Assignment.of(x)
    x.validate(model)
    total = 0.0
    for node, theta in enumerate(model.unaries):
        total += float(theta[x[node]])
    for edge in model.edges:
        total += float(edge.table[x[edge.i], x[edge.j]])
    return total


def lp_objective(model: Model, mu: Marginals) -> float:
    """Linear objective <theta, mu> over node and edge marginals."""
    mu.validate(model)
    total = 0.0
    for theta, m in zip(model.unaries, mu.node_marginals):
        total += float(theta @ m)
    for edge, m in zip(model.edges, mu.edge_marginals):
        total += float(np.sum(edge.table * m))
    return total


def qp_objective(model: Model, node_marginals: Sequence[np.ndarray]) -> float:
    """Quadratic objective sum_i theta_i.mu_i + sum_ij mu_i^T Theta_ij mu_j."""
    if isinstance(node_marginals, Marginals):
        node_marginals = node_marginals.node_marginals
    if len(node_marginals) != model.num_nodes:
        raise ModelError("node marginal count does not match the model")
    total = 0.0
    for node, (theta, m) in enumerate(zip(model.unaries, node_marginals)):
        if np.shape(m) != theta.shape:
            raise ModelError(f"node marginal {node} has shape {np.shape(m)}")
        total += float(theta @ m)
    for edge in model.edges:
        total += float(node_marginals[edge.i] @ edge.table @ node_marginals[edge.j])
    return total


def consistency_gap(mu: Marginals) -> float:
    """Largest violation of the row/column marginalisation constraints."""
    gap = 0.0
    for (i, j), table in zip(mu.edges, mu.edge_marginals):
        gap = max(gap, float(np.max(np.abs(table.sum(axis=1) - mu.node_marginals[i]))))
        gap = max(gap, float(np.max(np.abs(table.sum(axis=0) - mu.node_marginals[j]))))
    return gap

