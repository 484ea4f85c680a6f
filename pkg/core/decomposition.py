# core/decomposition.py
# Covering a model's edges with weighted acyclic subgraphs (forests)

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import networkx as nx
import numpy as np
from networkx.utils import UnionFind

from core.errors import ModelError

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class Forest:
    """Acyclic subgraph: sorted node ids and indices into model.edges."""
    nodes: Tuple[int, ...]
    edges: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class ForestDecomposition:
    """Forests G_a = (V_a, E_a) covering every node and edge, with weights eta_a."""
    forests: Tuple[Forest, ...]
    weights: Tuple[float, ...]
    num_nodes: int
    num_edges: int

    def __len__(self):
        return len(self.forests)

    @cached_property
    def node_trees(self):
        """A(i): the forests that contain node i."""
        members = [[] for _ in range(self.num_nodes)]
        for a, forest in enumerate(self.forests):
            for node in forest.nodes:
                members[node].append(a)
        return tuple(tuple(m) for m in members)

    @cached_property
    def edge_trees(self):
        """A(i, j): the forests that contain edge e."""
        members = [[] for _ in range(self.num_edges)]
        for a, forest in enumerate(self.forests):
            for e in forest.edges:
                members[e].append(a)
        return tuple(tuple(m) for m in members)

    @cached_property
    def node_weight(self):
        """Per node, sum of eta_a over the forests containing it."""
        return np.array([sum(self.weights[a] for a in trees) for trees in self.node_trees])

    def forest_degrees(self, model, a):
        """d_i^a for every node of forest a, as a dict."""
        degree = {node: 0 for node in self.forests[a].nodes}
        for e in self.forests[a].edges:
            degree[model.edges[e].i] += 1
            degree[model.edges[e].j] += 1
        return degree

    def validate(self, model):
        """
        Check every structural invariant against `model`.

        Raises:
            ModelError: when a forest has a cycle or a dangling edge, when
                        the union misses a node or edge, or when the weights
                        are not positive and summing to one
        """
        if self.num_nodes != model.num_nodes or self.num_edges != model.num_edges:
            raise ModelError("decomposition was built for a different model")
        if len(self.weights) != len(self.forests):
            raise ModelError("one weight per forest is required")
        if any(w <= 0 for w in self.weights):
            raise ModelError("forest weights must be positive")
        if abs(sum(self.weights) - 1.0) > WEIGHT_TOL:
            raise ModelError(f"forest weights sum to {sum(self.weights)!r}")
        for a, forest in enumerate(self.forests):
            members = set(forest.nodes)
            components = UnionFind()
            for e in forest.edges:
                edge = model.edges[e]
                if edge.i not in members or edge.j not in members:
                    raise ModelError(f"forest {a} has edge ({edge.i}, {edge.j}) outside its nodes")
                if components[edge.i] == components[edge.j]:
                    raise ModelError(f"forest {a} has a cycle through edge ({edge.i}, {edge.j})")
                components.union(edge.i, edge.j)
        if any(len(trees) == 0 for trees in self.node_trees):
            raise ModelError("some node is not covered by any forest")
        if any(len(trees) == 0 for trees in self.edge_trees):
            raise ModelError("some edge is not covered by any forest")


def _uniform_weights(count):
    return tuple(1.0 / count for _ in range(count))


def decompose_forest(model, grid_shape: Optional[Tuple[int, int]] = None) -> ForestDecomposition:
    """
    Greedy forest cover of the model's edges.

    The depth-first spanning forest (started at the lowest unvisited node,
    neighbours visited in ascending order) is the first forest and contains
    every node. Each remaining edge goes to the first additional forest in
    which it closes no cycle, or opens a new one. All weights are 1/|A|.

    Args:
        model: the model to cover
        grid_shape: (rows, cols) to use the horizontal/vertical grid split
                    instead of the greedy cover
    """
    if grid_shape is not None:
        return grid_decomposition(model, *grid_shape)

    graph = nx.Graph()
    graph.add_nodes_from(range(model.num_nodes))
    graph.add_edges_from(model.endpoints())

    spanning = []
    for u, v in nx.dfs_edges(graph):
        spanning.append(model.edge_index[(min(u, v), max(u, v))])
    in_spanning = set(spanning)

    extra_edges = []
    extra_sets = []
    for e, edge in enumerate(model.edges):
        if e in in_spanning:
            continue
        for edges, components in zip(extra_edges, extra_sets):
            if components[edge.i] != components[edge.j]:
                components.union(edge.i, edge.j)
                edges.append(e)
                break
        else:
            components = UnionFind()
            components.union(edge.i, edge.j)
            extra_edges.append([e])
            extra_sets.append(components)

    forests = [Forest(tuple(range(model.num_nodes)), tuple(sorted(spanning)))]
    for edges in extra_edges:
        nodes = sorted({n for e in edges for n in (model.edges[e].i, model.edges[e].j)})
        forests.append(Forest(tuple(nodes), tuple(sorted(edges))))

    logger.debug("greedy decomposition: %d forest(s) over %d edges", len(forests), model.num_edges)
    return ForestDecomposition(tuple(forests), _uniform_weights(len(forests)),
                               model.num_nodes, model.num_edges)


def grid_decomposition(model, rows: int, cols: int) -> ForestDecomposition:
    """
    Split a 4-neighbour grid (node id r * cols + c) into the forest of all
    horizontal edges and the forest of all vertical edges.

    Raises:
        ModelError: when the model is not exactly that grid
    """
    if model.num_nodes != rows * cols:
        raise ModelError(f"model has {model.num_nodes} nodes, a {rows}x{cols} grid has {rows * cols}")
    horizontal, vertical = [], []
    for r in range(rows):
        for c in range(cols):
            node = r * cols + c
            if c + 1 < cols:
                horizontal.append((node, node + 1))
            if r + 1 < rows:
                vertical.append((node, node + cols))
    if len(horizontal) + len(vertical) != model.num_edges:
        raise ModelError("model edges do not form a 4-neighbour grid")
    try:
        h_edges = tuple(sorted(model.edge_index[pair] for pair in horizontal))
        v_edges = tuple(sorted(model.edge_index[pair] for pair in vertical))
    except KeyError as missing:
        raise ModelError(f"grid edge {missing} is missing from the model") from None

    nodes = tuple(range(model.num_nodes))
    forests = [Forest(nodes, h_edges), Forest(nodes, v_edges)]
    forests = [f for f in forests if f.edges] or [Forest(nodes, ())]
    return ForestDecomposition(tuple(forests), _uniform_weights(len(forests)),
                               model.num_nodes, model.num_edges)
