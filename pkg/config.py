# config.py
# Solver configuration and process-level settings

import os
from dataclasses import asdict, dataclass, replace
from typing import Optional, Union

from core.errors import ConfigError

METHODS = ("uniform", "tree")
SCHEDULES = ("sequential", "synchronous")

# Process settings, read once from the environment
THREADS = max(1, int(os.environ.get("LPQP_THREADS", "1")))
LOG_LEVEL = os.environ.get("LPQP_LOG_LEVEL", "WARNING").upper()
PORT = int(os.environ.get("PORT", "5000"))


@dataclass
class LpqpConfig:
    """Everything the outer LPQP driver needs; see README for the meaning of each field."""
    method: str = "uniform"
    rho0: Union[float, str] = "auto"
    rho_factor: float = 1.5
    eps_dc: float = 1e-4
    eps_rho: float = 1e-4
    rho_max: Optional[float] = None
    max_outer: int = 60
    max_dc_iters: int = 200
    inner_tol: float = 1e-8
    seed: int = 0  # echoed in results only; no solver path draws random numbers
    clamp_floor: float = 1e-12

    inner_max_iters: int = 2000
    inner_tol_early: float = 1e-6
    early_outer_iters: int = 2
    damping: float = 0.0
    schedule: str = "sequential"
    grid_split: bool = False
    # floor on the dual decomposition tolerance; projected gradients stall near 1e-6
    dd_tol: float = 1e-6
    dd_max_iters: int = 2000

    def validate(self):
        """
        Raises:
            ConfigError: on the first invalid field
        """
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.rho0 != "auto":
            if not isinstance(self.rho0, (int, float)) or not self.rho0 > 0:
                raise ConfigError(f"rho0 must be positive or 'auto', got {self.rho0!r}")
        if not self.rho_factor > 1:
            raise ConfigError(f"rho_factor must exceed 1, got {self.rho_factor}")
        for name in ("eps_dc", "eps_rho", "inner_tol", "inner_tol_early", "dd_tol", "clamp_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("max_outer", "max_dc_iters", "inner_max_iters", "dd_max_iters"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.early_outer_iters < 0:
            raise ConfigError("early_outer_iters cannot be negative")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError(f"damping must lie in [0, 1), got {self.damping}")
        if self.rho_max is not None:
            if not self.rho_max > 0:
                raise ConfigError(f"rho_max must be positive, got {self.rho_max}")
            if self.rho0 != "auto" and self.rho0 > self.rho_max:
                raise ConfigError(f"rho0={self.rho0} exceeds rho_max={self.rho_max}")
        return self

    def with_defaults(self, model):
        """Copy with rho0 and rho_max resolved for `model`."""
        from lpqp import default_rho0

        self.validate()
        rho0 = default_rho0(model) if self.rho0 == "auto" else float(self.rho0)
        rho_max = 1e4 * rho0 if self.rho_max is None else float(self.rho_max)
        resolved = replace(self, rho0=rho0, rho_max=rho_max)
        return resolved.validate()

    def inner_tol_at(self, outer):
        """Inner tolerance for outer iteration `outer` (1-based)."""
        if outer <= self.early_outer_iters:
            return max(self.inner_tol, self.inner_tol_early)
        return self.inner_tol

    def tree_tol_at(self, outer):
        """Dual decomposition tolerance for outer iteration `outer`, never below dd_tol."""
        return max(self.inner_tol_at(outer), self.dd_tol)

    @classmethod
    def from_dict(cls, data):
        """Build from a plain dict, rejecting unknown keys."""
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        return cls(**data).validate()

    def to_dict(self):
        return asdict(self)
