# core/cccp.py
# Convex-concave procedure at a fixed penalty weight rho

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

from core.model import Marginals, Model
from core.objective import CLAMP_FLOOR, PenaltyKind, modified_unaries

logger = logging.getLogger(__name__)


@dataclass
class CCCPStep:
    """What one linearise-and-solve step produced."""
    iteration: int
    marginals: Marginals
    step_norm: float
    inner_iterations: int
    inner_residual: float
    inner_converged: bool


@dataclass
class CCCPResult:
    marginals: Marginals
    warm_state: Any
    iterations: int
    converged: bool
    steps: List[CCCPStep] = field(default_factory=list)

    @property
    def inner_iterations(self):
        return sum(s.inner_iterations for s in self.steps)


def run_cccp(model: Model, rho: float, mu_init: Marginals, kind: PenaltyKind,
             inner_solve: Callable, eps_dc: float, max_dc_iters: int,
             warm_state=None, floor: float = CLAMP_FLOOR,
             on_step: Optional[Callable[[CCCPStep], None]] = None) -> CCCPResult:
    """
    Repeat {linearise the concave part at mu^t; solve the convex subproblem}
    until ||mu^{t+1} - mu^t||_2 <= eps_dc or max_dc_iters steps were taken.

    Args:
        inner_solve: callable(theta_tilde, warm_state) returning a report with
                     marginals, iterations, final_residual, converged and
                     warm_state attributes
        on_step: called after every step (trace recording)
    """
    mu = mu_init
    steps = []
    converged = False
    for t in range(1, max_dc_iters + 1):
        theta_tilde = modified_unaries(model, mu, rho, kind, floor)
        report = inner_solve(theta_tilde, warm_state)
        warm_state = report.warm_state
        step_norm = report.marginals.distance(mu)
        step = CCCPStep(t, report.marginals, step_norm, report.iterations,
                        report.final_residual, report.converged)
        steps.append(step)
        if on_step is not None:
            on_step(step)
        mu = report.marginals
        if step_norm <= eps_dc:
            converged = True
            break
    if not converged:
        logger.warning("CCCP hit %d iterations at rho=%.4g without reaching eps_dc=%.1e",
                       max_dc_iters, rho, eps_dc)
    return CCCPResult(mu, warm_state, len(steps), converged, steps)
