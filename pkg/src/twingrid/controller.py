"""Closed-loop selection of the regularization weight.

Each step solves the problem on the primary grid and on a grid rotated by a
fixed angle, measures their masked SSIM, and moves ``log10(alpha)`` by
``k_p * (s_ref - S)``. The loop stops once the error has stayed inside the
tolerance band for ``n_consecutive`` steps in a row.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .geometry import FovMask, Sinogram, draw_theta, make_fov_mask
from .metrics import ConsistencyReading, SsimParams, measure_consistency
from .projector import ProjectionOperator
from .solvers import Reconstruction, SolverConfig

__all__ = [
    "ControllerConfig",
    "TrajectoryEntry",
    "ControllerState",
    "ControlResult",
    "controller_step",
    "run_control_loop",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControllerConfig:
    s_ref: float = 0.90
    k_p: float = 0.5
    epsilon: float = 0.05
    n_consecutive: int = 5
    alpha_init: float = 1e-6
    max_steps: int = 100
    alpha_bounds: tuple[float, float] = (1e-12, 1e4)
    theta_range: tuple[float, float] = (10.0, 20.0)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.alpha_bounds
        if not (0 < self.s_ref < 1):
            raise ValueError(f"s_ref must be in (0, 1), got {self.s_ref}")
        if self.k_p < 0:
            raise ValueError(f"k_p must be >= 0, got {self.k_p}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.n_consecutive < 1:
            raise ValueError(f"n_consecutive must be >= 1, got {self.n_consecutive}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if not (0 < lo < self.alpha_init < hi):
            raise ValueError(
                f"need 0 < alpha_min < alpha_init < alpha_max, got {lo}, {self.alpha_init}, {hi}"
            )
        t_lo, t_hi = self.theta_range
        if not t_lo <= t_hi:
            raise ValueError(f"theta_range must be ordered, got {self.theta_range}")

    def with_(self, **kw) -> "ControllerConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class TrajectoryEntry:
    step: int
    alpha: float
    ssim: float
    error: float
    in_band: bool

    def as_row(self) -> dict:
        return {
            "step": self.step,
            "alpha": self.alpha,
            "ssim": self.ssim,
            "error": self.error,
            "in_band": self.in_band,
        }


@dataclass(frozen=True)
class ControllerState:
    step: int
    alpha: float
    history: tuple[TrajectoryEntry, ...] = ()
    in_band_count: int = 0
    converged: bool = False

    @classmethod
    def initial(cls, cfg: ControllerConfig) -> "ControllerState":
        return cls(step=0, alpha=cfg.alpha_init)


@dataclass(frozen=True)
class ControlResult:
    reconstruction: Reconstruction
    final_alpha: float
    trajectory: tuple[TrajectoryEntry, ...]
    converged: bool
    steps_used: int
    theta: float
    final_reading: Optional[ConsistencyReading] = None

    @property
    def final_ssim(self) -> float:
        return self.trajectory[-1].ssim


def controller_step(state: ControllerState, s_k: float, cfg: ControllerConfig) -> ControllerState:
    """One proportional update of ``alpha`` in the log10 domain."""
    if not (-1.0 <= s_k <= 1.0):
        raise ValueError(f"SSIM reading must lie in [-1, 1], got {s_k}")
    e_k = cfg.s_ref - s_k
    in_band = abs(e_k) < cfg.epsilon
    count = state.in_band_count + 1 if in_band else 0
    lo, hi = cfg.alpha_bounds
    alpha_next = min(max(state.alpha * 10.0 ** (cfg.k_p * e_k), lo), hi)
    entry = TrajectoryEntry(state.step, state.alpha, float(s_k), float(e_k), in_band)
    return ControllerState(
        step=state.step + 1,
        alpha=alpha_next,
        history=state.history + (entry,),
        in_band_count=count,
        converged=count >= cfg.n_consecutive,
    )


def run_control_loop(
    y: Sinogram,
    op_a: ProjectionOperator,
    cfg: ControllerConfig = ControllerConfig(),
    solver_cfg: SolverConfig = SolverConfig(),
    mask: Optional[FovMask] = None,
    params: SsimParams = SsimParams(),
    warm_start: bool = True,
    theta: Optional[float] = None,
    callback: Optional[Callable[[ControllerState, ConsistencyReading], None]] = None,
) -> ControlResult:
    """Drive ``alpha`` until the inter-grid SSIM settles in the target band.

    ``theta`` (radians) overrides the seeded draw from ``cfg.theta_range``.
    A run that hits ``max_steps`` returns with ``converged=False``.
    """
    if theta is None:
        theta = draw_theta(cfg.seed, cfg.theta_range)
    op_b = op_a.rotated(theta)
    if mask is None:
        mask = make_fov_mask(op_a.n, op_a.n)
    state = ControllerState.initial(cfg)
    reading = None
    ws = (None, None)
    while state.step < cfg.max_steps and not state.converged:
        reading = measure_consistency(y, op_a, op_b, theta, state.alpha, solver_cfg, mask, params, ws)
        if warm_start:
            ws = (reading.primary, reading.secondary)
        state = controller_step(state, reading.s_value, cfg)
        last = state.history[-1]
        log.debug("step %d alpha=%.4e S=%.4f e=%+.4f", last.step, last.alpha, last.ssim, last.error)
        if callback is not None:
            callback(state, reading)
    last = state.history[-1]
    return ControlResult(
        reconstruction=reading.primary,
        final_alpha=last.alpha,
        trajectory=state.history,
        converged=state.converged,
        steps_used=state.step,
        theta=theta,
        final_reading=reading,
    )
