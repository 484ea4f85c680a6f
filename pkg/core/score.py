# core/score.py
# Relative score of several methods' energies on one instance

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from core.errors import ModelError


@dataclass(frozen=True)
class ScoreReport:
    """Energies and scores (1 = best, 0 = worst), in input order."""
    energies: Tuple[float, ...]
    scores: Tuple[float, ...]
    reference: float

    def to_dict(self):
        return {
            "energies": list(self.energies),
            "scores": list(self.scores),
            "reference": self.reference,
        }


def score(energies: Sequence[float], optimum: Optional[float] = None) -> ScoreReport:
    """
    Score each energy by its position between the worst and the best one.

        s_i = (max_j e_j - e_i) / (max_j e_j - min_j e_j)

    Args:
        energies: one energy per method
        optimum: known optimal energy; replaces the minimum as the reference

    Returns:
        ScoreReport; when the worst energy equals the reference every score is 1

    Raises:
        ModelError: when `energies` is empty or holds a non-finite value
    """
    values = np.asarray(list(energies), dtype=np.float64)
    if values.size == 0:
        raise ModelError("score needs at least one energy")
    if not np.all(np.isfinite(values)):
        raise ModelError("energies must be finite")

    worst = float(values.max())
    best = float(values.min()) if optimum is None else float(optimum)
    if worst == best:
        scores = np.ones_like(values)
    else:
        scores = np.clip((worst - values) / (worst - best), 0.0, 1.0)
    return ScoreReport(tuple(values.tolist()), tuple(float(s) for s in scores), best)
