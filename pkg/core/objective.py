# core/objective.py
# KL penalties, entropies, the combined LPQP objective and its DC split

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.special import entr, rel_entr

from core.decomposition import Forest, ForestDecomposition
from core.errors import ModelError
from core.model import Marginals, Model, lp_objective

CLAMP_FLOOR = 1e-12

UNIFORM = "uniform"
TREE = "tree"


@dataclass(frozen=True, eq=False)
class PenaltyKind:
    """Edge weighting of the KL penalty: uniform, or per forest of a decomposition."""
    variant: str
    decomposition: Optional[ForestDecomposition] = None

    def __post_init__(self):
        if self.variant not in (UNIFORM, TREE):
            raise ModelError(f"unknown penalty variant {self.variant!r}")
        if self.variant == TREE and self.decomposition is None:
            raise ModelError("the tree penalty needs a forest decomposition")

    @classmethod
    def uniform(cls):
        return cls(UNIFORM)

    @classmethod
    def tree(cls, decomposition):
        return cls(TREE, decomposition)

    @property
    def is_tree(self):
        return self.variant == TREE


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ModelError("entropy of a vector with negative entries")
    return float(np.sum(entr(p)))


def kl(p, q) -> float:
    """
    KL divergence sum_k p_k log(p_k / q_k) in nats.

    Terms with p_k = 0 contribute nothing; a q_k = 0 with p_k > 0 gives +inf.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ModelError(f"kl of mismatched shapes {p.shape} and {q.shape}")
    return float(np.sum(rel_entr(p, q)))


def edge_kl(mu: Marginals, e: int) -> float:
    i, j = mu.edges[e]
    return kl(mu.edge_marginals[e], np.outer(mu.node_marginals[i], mu.node_marginals[j]))


def penalty(mu: Marginals, kind: PenaltyKind) -> float:
    """KL penalty g(mu) between edge marginals and products of node marginals."""
    if not kind.is_tree:
        return sum(edge_kl(mu, e) for e in range(len(mu.edges)))
    decomposition = kind.decomposition
    total = 0.0
    for weight, forest in zip(decomposition.weights, decomposition.forests):
        total += weight * sum(edge_kl(mu, e) for e in forest.edges)
    return total


def lpqp_objective(model: Model, mu: Marginals, rho: float, kind: PenaltyKind) -> float:
    """LP objective plus rho times the KL penalty."""
    if rho == 0:
        return lp_objective(model, mu)
    return lp_objective(model, mu) + rho * penalty(mu, kind)


def tree_entropy(mu: Marginals, forest: Forest) -> float:
    """sum of edge entropies minus (d_i^a - 1)-weighted node entropies of a forest."""
    degree = {node: 0 for node in forest.nodes}
    total = 0.0
    for e in forest.edges:
        if e >= len(mu.edges):
            raise ModelError(f"forest edge {e} is missing from the marginals")
        i, j = mu.edges[e]
        if i not in degree or j not in degree:
            raise ModelError(f"forest edge ({i}, {j}) has an endpoint outside the forest")
        degree[i] += 1
        degree[j] += 1
        total += entropy(mu.edge_marginals[e])
    for node in forest.nodes:
        if node >= mu.num_nodes:
            raise ModelError(f"forest node {node} is missing from the marginals")
        total -= (degree[node] - 1) * entropy(mu.node_marginals[node])
    return total


def clamped_log(p, floor=CLAMP_FLOOR):
    return np.log(np.maximum(p, floor))


def unary_gradient_weights(model: Model, kind: PenaltyKind) -> np.ndarray:
    """Per-node coefficient of rho * log(mu_i) in the linearised concave part."""
    if kind.is_tree:
        return kind.decomposition.node_weight
    return model.degrees.astype(np.float64)


def modified_unaries(model: Model, mu_prev: Marginals, rho: float, kind: PenaltyKind,
                     floor: float = CLAMP_FLOOR) -> List[np.ndarray]:
    """
    Unaries of the CCCP subproblem: theta_i - rho * w_i * log(mu_i^t).

    w_i is the node degree for the uniform penalty and the summed weight of
    the forests containing i for the tree penalty. The constant part of the
    gradient is dropped.
    """
    weights = unary_gradient_weights(model, kind)
    return [
        theta - rho * weights[node] * clamped_log(mu_prev.node_marginals[node], floor)
        for node, theta in enumerate(model.unaries)
    ]


@dataclass(frozen=True)
class DCParts:
    """u and v of the DC split, and (u - v) - lpqp_objective."""
    u: float
    v: float
    residual: float


def dc_parts(model: Model, mu: Marginals, rho: float, kind: PenaltyKind) -> DCParts:
    """
    Convex parts u and v with u - v equal to the LPQP objective on the local
    polytope. On inconsistent marginals the residual reports how far the
    identity is off.
    """
    lp = lp_objective(model, mu)
    node_h = [entropy(m) for m in mu.node_marginals]
    if kind.is_tree:
        decomposition = kind.decomposition
        u = lp - rho * sum(w * tree_entropy(mu, f)
                           for w, f in zip(decomposition.weights, decomposition.forests))
        v = -rho * sum(w * sum(node_h[i] for i in f.nodes)
                       for w, f in zip(decomposition.weights, decomposition.forests))
    else:
        u = lp - rho * sum(entropy(m) for m in mu.edge_marginals)
        v = -rho * sum(d * h for d, h in zip(model.degrees, node_h))
    residual = (u - v) - lpqp_objective(model, mu, rho, kind)
    return DCParts(float(u), float(v), float(residual))


def uniform_subproblem_objective(model: Model, theta_tilde, rho: float, mu: Marginals) -> float:
    """Entropy-smoothed LP solved in each uniform CCCP step."""
    total = sum(float(t @ m) for t, m in zip(theta_tilde, mu.node_marginals))
    for edge, m in zip(model.edges, mu.edge_marginals):
        total += float(np.sum(edge.table * m)) - rho * entropy(m)
    return total


def tree_subproblem_objective(model: Model, theta_tilde, rho: float, mu: Marginals,
                              decomposition: ForestDecomposition) -> float:
    """Tree-entropy-smoothed LP solved in each tree CCCP step."""
    total = sum(float(t @ m) for t, m in zip(theta_tilde, mu.node_marginals))
    total += sum(float(np.sum(edge.table * m)) for edge, m in zip(model.edges, mu.edge_marginals))
    for weight, forest in zip(decomposition.weights, decomposition.forests):
        total -= rho * weight * tree_entropy(mu, forest)
    return total
