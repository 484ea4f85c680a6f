# lpqp.py
# Outer LPQP driver: rho schedule, trace recording, rounding and decoding

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import pandas as pd

from config import LpqpConfig
from core.decomposition import decompose_forest
from core.dual_decomposition import cccp_tree
from core.errors import ConfigError
from core.model import Assignment, Marginals, Model, energy, lp_objective, qp_objective
from core.norm_product import cccp_uniform
from core.objective import PenaltyKind, penalty

logger = logging.getLogger(__name__)

CONVERGED = "converged"
RHO_CAPPED = "rho_capped"
ITER_CAPPED = "iter_capped"

TRACE_COLUMNS = ["outer", "dc_iter", "rho", "lp_obj", "penalty", "lpqp_obj",
                 "decoded_energy", "inner_iters", "residual", "seconds"]

RHO0_FLOOR = 1e-3


# ==================================================================================
# ROUNDING AND DECODING
# ==================================================================================

def round_solution(model: Model, mu) -> Assignment:
    """
    Sequential rounding in ascending node order.

    Node i takes the label minimising theta_i(k) + sum_j sum_l theta_ij(k, l) mu_j(l)
    under the current node marginals, after which mu_i becomes the indicator
    of that label. Ties go to the smallest label. The resulting energy never
    exceeds the quadratic objective of the input node marginals.
    """
    nodes = mu.node_marginals if isinstance(mu, Marginals) else mu
    nodes = [np.array(m, dtype=np.float64) for m in nodes]
    labels = []
    for node in range(model.num_nodes):
        cost = model.unaries[node].copy()
        for neighbor, e in model.neighbors[node]:
            cost += model.edges[e].oriented(node) @ nodes[neighbor]
        label = int(np.argmin(cost))
        nodes[node] = np.zeros_like(nodes[node])
        nodes[node][label] = 1.0
        labels.append(label)
    return Assignment.of(labels)


def decode_argmax(mu) -> Assignment:
    """Independent per-node argmax, ties to the smallest label."""
    nodes = mu.node_marginals if isinstance(mu, Marginals) else mu
    return Assignment.of(int(np.argmax(m)) for m in nodes)


def default_rho0(model: Model) -> float:
    """0.1 times the mean absolute potential entry, floored at 1e-3."""
    parts = [u.ravel() for u in model.unaries] + [e.table.ravel() for e in model.edges]
    entries = np.concatenate(parts) if parts else np.zeros(0)
    if entries.size == 0:
        return RHO0_FLOOR
    return max(0.1 * float(np.mean(np.abs(entries))), RHO0_FLOOR)


# ==================================================================================
# TRACE AND RESULT
# ==================================================================================

@dataclass
class RunTrace:
    """One row per CCCP iteration, in execution order."""
    rows: List[dict] = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    @property
    def rhos(self):
        return [row["rho"] for row in self.rows]

    def to_frame(self, include_timing=True):
        frame = pd.DataFrame(self.rows, columns=TRACE_COLUMNS)
        if not include_timing:
            frame["seconds"] = np.nan
        return frame


@dataclass
class LpqpResult:
    final_marginals: Marginals
    rounded: Assignment
    rounded_energy: float
    trace: RunTrace
    status: str
    config: LpqpConfig
    outer_iterations: int
    final_rho: float
    wall_time: float

    @property
    def decoded(self):
        return decode_argmax(self.final_marginals)

    def summary(self, model):
        """Headline numbers for console and API output."""
        decoded = self.decoded
        return {
            "status": self.status,
            "method": self.config.method,
            "rho0": self.config.rho0,
            "final_rho": self.final_rho,
            "outer_iterations": self.outer_iterations,
            "cccp_iterations": len(self.trace),
            "lp_objective": lp_objective(model, self.final_marginals),
            "qp_objective": qp_objective(model, self.final_marginals),
            "rounded_energy": self.rounded_energy,
            "decoded_energy": energy(model, decoded),
        }


# ==================================================================================
# DRIVER
# ==================================================================================

def infer_grid_shape(model: Model):
    side = math.isqrt(model.num_nodes)
    if side * side != model.num_nodes:
        raise ConfigError(f"grid_split needs a square grid, model has {model.num_nodes} nodes")
    return side, side


def penalty_kind(model: Model, config: LpqpConfig) -> PenaltyKind:
    if config.method == "uniform":
        return PenaltyKind.uniform()
    grid_shape = infer_grid_shape(model) if config.grid_split else None
    decomposition = decompose_forest(model, grid_shape=grid_shape)
    decomposition.validate(model)
    return PenaltyKind.tree(decomposition)


def lpqp_run(model: Model, config: Optional[LpqpConfig] = None,
             on_row: Optional[Callable[[dict], None]] = None) -> LpqpResult:
    """
    Minimise the LP objective plus rho times the KL penalty for an increasing
    rho sequence rho0, rho0 * f, rho0 * f^2, ... starting from uniform
    marginals, then round the final node marginals.

    Stops with `converged` once the marginals move by at most eps_rho over a
    whole outer iteration (from the second one on), with `rho_capped` when
    the next rho would exceed rho_max and with `iter_capped` after max_outer
    outer iterations. Inner solvers are warm-started throughout.

    Raises:
        ConfigError: when `config` is invalid
    """
    config = (config or LpqpConfig()).with_defaults(model)
    kind = penalty_kind(model, config)
    mu = Marginals.uniform(model)
    rho = config.rho0
    warm = None
    trace = RunTrace()
    status = ITER_CAPPED
    outer = 0
    start = time.perf_counter()

    for outer in range(1, config.max_outer + 1):
        mu0 = mu
        inner_tol = config.inner_tol_at(outer)

        def record(step, outer=outer, rho=rho):
            lp = lp_objective(model, step.marginals)
            pen = penalty(step.marginals, kind)
            row = {
                "outer": outer,
                "dc_iter": step.iteration,
                "rho": rho,
                "lp_obj": lp,
                "penalty": pen,
                "lpqp_obj": lp + rho * pen,
                "decoded_energy": energy(model, decode_argmax(step.marginals)),
                "inner_iters": step.inner_iterations,
                "residual": step.step_norm,
                "seconds": time.perf_counter() - start,
            }
            trace.append(**row)
            if on_row is not None:
                on_row(row)

        if kind.is_tree:
            result = cccp_tree(model, rho, mu, kind.decomposition, config.eps_dc,
                               config.tree_tol_at(outer), config.max_dc_iters, warm,
                               config.dd_max_iters, config.clamp_floor, record)
        else:
            result = cccp_uniform(model, rho, mu, config.eps_dc, inner_tol, config.max_dc_iters,
                                  warm, config.inner_max_iters, config.schedule, config.damping,
                                  config.clamp_floor, record)
        mu, warm = result.marginals, result.warm_state
        change = mu.distance(mu0)
        logger.info("outer %d: rho=%.4g, %d CCCP step(s), change %.3e, penalty %.3e",
                    outer, rho, result.iterations, change, penalty(mu, kind))

        if outer >= 2 and change <= config.eps_rho:
            status = CONVERGED
            break
        if rho * config.rho_factor > config.rho_max:
            status = RHO_CAPPED
            break
        rho *= config.rho_factor

    rounded = round_solution(model, mu)
    # a second pass started from the argmax vertex can only lower its energy
    polished = round_solution(model, Marginals.from_assignment(model, decode_argmax(mu)))
    if energy(model, polished) < energy(model, rounded):
        logger.debug("argmax-started rounding beats the marginal rounding")
        rounded = polished
    wall_time = time.perf_counter() - start
    logger.info("LPQP %s finished: %s after %d outer iteration(s), rounded energy %.6g",
                config.method, status, outer, energy(model, rounded))
    return LpqpResult(mu, rounded, energy(model, rounded), trace, status, config,
                      outer, rho, wall_time)
