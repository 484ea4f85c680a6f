# core/norm_product.py
# Norm-product belief propagation for the uniform-weighting CCCP subproblem
#
# Messages live in a padded (directed edge x max label) log-domain matrix, the
# same layout as matrix belief propagators: message 2e travels j -> i and
# message 2e + 1 travels i -> j for edge e = (i, j). Padded labels hold 0 in
# the message matrix and +inf in the energy tables, so they never contribute.

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import networkx as nx
import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from core.cccp import CCCPResult, run_cccp
from core.errors import ConfigError
from core.model import Marginals, Model
from core.objective import CLAMP_FLOOR, PenaltyKind

logger = logging.getLogger(__name__)

SEQUENTIAL = "sequential"
SYNCHRONOUS = "synchronous"
SCHEDULES = (SEQUENTIAL, SYNCHRONOUS)


class MessageGraph:
    """Index structures for vectorised message passing on one model."""

    def __init__(self, model: Model):
        self.model = model
        n, num_edges = model.num_nodes, model.num_edges
        self.max_states = max(model.cardinalities) if n else 1
        kmax = self.max_states
        self.num_messages = 2 * num_edges

        self.valid = np.zeros((n, kmax), dtype=bool)
        for node, k in enumerate(model.cardinalities):
            self.valid[node, :k] = True

        self.receiver = np.empty(self.num_messages, dtype=np.int64)
        self.sender = np.empty(self.num_messages, dtype=np.int64)
        self.tables = np.full((self.num_messages, kmax, kmax), np.inf)
        for e, edge in enumerate(model.edges):
            ki, kj = edge.table.shape
            self.receiver[2 * e], self.sender[2 * e] = edge.i, edge.j
            self.receiver[2 * e + 1], self.sender[2 * e + 1] = edge.j, edge.i
            self.tables[2 * e, :ki, :kj] = edge.table
            self.tables[2 * e + 1, :kj, :ki] = edge.table.T
        self.reverse = np.arange(self.num_messages) ^ 1
        self.valid_receiver = self.valid[self.receiver]

        # (node x message) incidence: row n sums the messages received by n
        self.incoming = sparse.csr_matrix(
            (np.ones(self.num_messages), (self.receiver, np.arange(self.num_messages))),
            shape=(n, self.num_messages),
        )
        self.degrees = model.degrees.astype(np.float64)

        # greedy colouring in ascending node order; nodes of one class share
        # no edge, so their incoming messages can be refreshed together
        graph = nx.Graph()
        graph.add_nodes_from(range(n))
        graph.add_edges_from(model.endpoints())
        colouring = nx.greedy_color(graph, strategy=lambda g, colors: sorted(g))
        num_colours = max(colouring.values(), default=-1) + 1
        colour_of = np.array([colouring[node] for node in range(n)], dtype=np.int64)
        self.colour_blocks = [
            np.flatnonzero(colour_of[self.receiver] == c) for c in range(num_colours)
        ]
        self.all_messages = np.arange(self.num_messages)

    def padded_unaries(self, theta_tilde):
        theta = np.full(self.valid.shape, np.inf)
        for node, t in enumerate(theta_tilde):
            theta[node, :len(t)] = t
        return theta

    def node_sums(self, theta, log_messages):
        """log(psi_i * prod_j m_{j->i}) for every node, -inf on padded labels."""
        return -theta + self.incoming @ log_messages

    def cavities(self, sums, log_messages, messages):
        """
        Sender-side cavity for each message in `messages`: the sender's
        belief (at exponent 1/d) with the receiver's message removed.
        """
        senders = self.sender[messages]
        return sums[senders] / self.degrees[senders, None] - log_messages[self.reverse[messages]]


@lru_cache(maxsize=32)
def message_graph(model: Model) -> MessageGraph:
    return MessageGraph(model)


@dataclass(frozen=True, eq=False)
class MessageState:
    """
    Log-domain messages, one row per directed edge (see module comment).
    Every row is normalised so that its largest valid entry is 0.
    """
    log_messages: np.ndarray

    @classmethod
    def zeros(cls, model: Model):
        graph = message_graph(model)
        return cls(np.zeros((graph.num_messages, graph.max_states)))

    def message(self, model: Model, sender: int, receiver: int) -> np.ndarray:
        """m_{sender -> receiver}, of length K_receiver."""
        e = model.edge_index[(min(sender, receiver), max(sender, receiver))]
        d = 2 * e if receiver < sender else 2 * e + 1
        return self.log_messages[d, :model.cardinalities[receiver]]

    def shifted(self, model: Model, sender: int, receiver: int, constant: float):
        """Copy with `constant` added to one log-message."""
        e = model.edge_index[(min(sender, receiver), max(sender, receiver))]
        d = 2 * e if receiver < sender else 2 * e + 1
        log_messages = self.log_messages.copy()
        log_messages[d, :model.cardinalities[receiver]] += constant
        return MessageState(log_messages)


@dataclass(frozen=True, eq=False)
class InnerSolveReport:
    """Outcome of one entropy-smoothed subproblem solve."""
    marginals: Marginals
    messages: MessageState
    iterations: int
    final_residual: float
    converged: bool

    @property
    def warm_state(self):
        return self.messages


def _check_rho(rho):
    if not rho > 0:
        raise ConfigError(f"norm-product needs rho > 0, got {rho}")


def _normalise_rows(log_messages, valid):
    peak = np.where(valid, log_messages, -np.inf).max(axis=1, keepdims=True)
    return np.where(valid, log_messages - peak, 0.0)


def _update(graph, theta, rho, log_messages, messages, damping):
    sums = graph.node_sums(theta, log_messages)
    cavity = graph.cavities(sums, log_messages, messages)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = (cavity[:, None, :] - graph.tables[messages]) / rho
        updated = rho * logsumexp(scores, axis=2)
    valid = graph.valid_receiver[messages]
    updated = _normalise_rows(updated, valid)
    if damping > 0:
        updated = _normalise_rows(damping * log_messages[messages] + (1.0 - damping) * updated, valid)
    return updated


def normprod_step(model: Model, theta_tilde, rho: float, msgs: MessageState,
                  schedule: str = SEQUENTIAL, damping: float = 0.0) -> MessageState:
    """
    One full pass of norm-product message updates.

    m_{j->i}(x_i) ~ (sum_{x_j} psi_ij^{1/rho} psi_j^{1/(d_j rho)}
                     prod_{s in N(j)} m_{s->j}^{1/(d_j rho)} / m_{i->j}^{1/rho})^rho

    `sequential` refreshes the messages into one colour class of nodes at a
    time (lowest colour first), which is an exact block-coordinate ascent
    step on the dual of the subproblem; `synchronous` recomputes every
    message from the previous state. `damping` mixes the previous log
    messages into the update: new = damping * old + (1 - damping) * update.

    Raises:
        ConfigError: for rho <= 0, an unknown schedule or damping outside [0, 1)
    """
    _check_rho(rho)
    if schedule not in SCHEDULES:
        raise ConfigError(f"unknown message schedule {schedule!r}")
    if not 0.0 <= damping < 1.0:
        raise ConfigError(f"damping must lie in [0, 1), got {damping}")
    graph = message_graph(model)
    theta = graph.padded_unaries(theta_tilde)
    log_messages = msgs.log_messages.copy()
    if graph.num_messages == 0:
        return MessageState(log_messages)

    if schedule == SYNCHRONOUS:
        log_messages = _update(graph, theta, rho, log_messages, graph.all_messages, damping)
    else:
        for block in graph.colour_blocks:
            log_messages[block] = _update(graph, theta, rho, log_messages, block, damping)
    return MessageState(log_messages)


def _isolated_marginal(theta):
    ties = np.isclose(theta, theta.min(), rtol=0.0, atol=1e-12)
    return ties / ties.sum()


def beliefs(model: Model, theta_tilde, rho: float, msgs: MessageState) -> Marginals:
    """
    Node and edge marginals induced by the messages.

    mu_i ~ (psi_i prod_j m_{j->i})^{1/(d_i rho)}; the edge table is
    mu_ij ~ exp(-theta_ij / rho) (cav_i cav_j)^{1/rho} where cav_i is the node
    belief at exponent 1/d_i with m_{j->i} removed. A node without edges
    spreads its mass evenly over the minimisers of its modified unary.
    """
    _check_rho(rho)
    graph = message_graph(model)
    theta = graph.padded_unaries(theta_tilde)
    log_messages = msgs.log_messages
    sums = graph.node_sums(theta, log_messages)

    node_marginals = []
    with np.errstate(divide="ignore", invalid="ignore"):
        for node, k in enumerate(model.cardinalities):
            if model.degrees[node] == 0:
                node_marginals.append(_isolated_marginal(np.asarray(theta_tilde[node], dtype=np.float64)))
                continue
            scaled = sums[node, :k] / (graph.degrees[node] * rho)
            node_marginals.append(np.exp(scaled - logsumexp(scaled)))

        edge_marginals = []
        if model.num_edges:
            to_low = np.arange(0, graph.num_messages, 2)
            cav_i = graph.cavities(sums, log_messages, to_low + 1)
            cav_j = graph.cavities(sums, log_messages, to_low)
            scores = (cav_i[:, :, None] + cav_j[:, None, :] - graph.tables[to_low]) / rho
            for e, edge in enumerate(model.edges):
                ki, kj = edge.table.shape
                block = scores[e, :ki, :kj]
                edge_marginals.append(np.exp(block - logsumexp(block)))
    return Marginals.create(node_marginals, edge_marginals, model.endpoints())


def solve_inner_uniform(model: Model, theta_tilde, rho: float,
                        init_msgs: Optional[MessageState] = None,
                        tol: float = 1e-8, max_iters: int = 2000,
                        schedule: str = SEQUENTIAL, damping: float = 0.0) -> InnerSolveReport:
    """
    Iterate normprod_step until the largest log-message change is at most
    `tol` or `max_iters` passes were made. Never raises on non-convergence;
    the report carries the flag.
    """
    _check_rho(rho)
    msgs = init_msgs if init_msgs is not None else MessageState.zeros(model)
    residual = 0.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        updated = normprod_step(model, theta_tilde, rho, msgs, schedule, damping)
        residual = float(np.max(np.abs(updated.log_messages - msgs.log_messages), initial=0.0))
        msgs = updated
        if residual <= tol:
            converged = True
            break
    if not converged:
        logger.warning("norm-product stopped after %d passes at residual %.3e (rho=%.4g)",
                       iterations, residual, rho)
    else:
        logger.debug("norm-product converged in %d passes (rho=%.4g)", iterations, rho)
    return InnerSolveReport(beliefs(model, theta_tilde, rho, msgs), msgs, iterations, residual, converged)


def cccp_uniform(model: Model, rho: float, mu_init: Marginals, eps_dc: float = 1e-4,
                 inner_tol: float = 1e-8, max_dc_iters: int = 200,
                 init_msgs: Optional[MessageState] = None, inner_max_iters: int = 2000,
                 schedule: str = SEQUENTIAL, damping: float = 0.0,
                 floor: float = CLAMP_FLOOR, on_step=None) -> CCCPResult:
    """
    CCCP for the uniform-weighting objective at fixed rho, each convex step
    solved by norm-product BP warm-started from the previous messages.
    """
    _check_rho(rho)

    def inner(theta_tilde, warm):
        return solve_inner_uniform(model, theta_tilde, rho, warm, inner_tol,
                                   inner_max_iters, schedule, damping)

    return run_cccp(model, rho, mu_init, PenaltyKind.uniform(), inner, eps_dc,
                    max_dc_iters, init_msgs, floor, on_step)
