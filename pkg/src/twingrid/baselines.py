"""Open-loop parameter choice: alpha sweeps, the L-curve corner and the discrepancy principle."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import FovMask, ImageGrid, Sinogram, make_fov_mask
from .metrics import SsimParams, gradient_energy, measure_consistency
from .projector import ProjectionOperator
from .solvers import Reconstruction, SolverConfig, regularizer_value, solve

__all__ = [
    "SweepRecord",
    "sweep",
    "log_alphas",
    "parse_alpha_range",
    "polyline_curvature",
    "monotone_run",
    "prune_close",
    "lcurve_select",
    "DegenerateCornerWarning",
    "BracketError",
    "DiscrepancyResult",
    "discrepancy_target",
    "discrepancy_search",
    "discrepancy_select",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepRecord:
    alpha: float
    s_value: float
    residual_norm: float
    reg_value: float
    detail: float

    def as_row(self) -> dict:
        return {
            "alpha": self.alpha,
            "ssim": self.s_value,
            "residual_norm": self.residual_norm,
            "reg_value": self.reg_value,
            "gradient_energy": self.detail,
        }


def log_alphas(lo: float, hi: float, count: int) -> np.ndarray:
    if not (0 < lo < hi) or count < 2:
        raise ValueError(f"need 0 < lo < hi and count >= 2, got {lo}, {hi}, {count}")
    return np.logspace(math.log10(lo), math.log10(hi), count)


def parse_alpha_range(text: str) -> np.ndarray:
    """Parse ``"lo:hi:count"`` into log-spaced weights."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"alpha range must look like lo:hi:count, got {text!r}")
    return log_alphas(float(parts[0]), float(parts[1]), int(parts[2]))


def residual_norm(x: np.ndarray, y: np.ndarray, op: ProjectionOperator) -> float:
    return float(np.linalg.norm(op.forward(x) - y))


def sweep(
    y: Sinogram,
    op_a: ProjectionOperator,
    theta: float,
    alphas: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    mask: Optional[FovMask] = None,
    params: SsimParams = SsimParams(),
    warm_start: bool = True,
    on_record: Optional[Callable] = None,
) -> list[SweepRecord]:
    """Record consistency, residual, penalty and detail along increasing ``alphas``.

    With ``warm_start`` each pair of solves starts from the previous weight's
    solutions. ``on_record(index, record, reading)`` sees every step.
    """
    alphas = [float(a) for a in alphas]
    if not alphas or any(a <= 0 for a in alphas):
        raise ValueError("alphas must be a non-empty list of positive weights")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly increasing")
    op_b = op_a.rotated(theta)
    if mask is None:
        mask = make_fov_mask(op_a.n, op_a.n)
    yv = np.asarray(y.values, dtype=np.float64)
    records = []
    ws = (None, None)
    for a in alphas:
        reading = measure_consistency(y, op_a, op_b, theta, a, cfg, mask, params, ws)
        if warm_start:
            ws = (reading.primary, reading.secondary)
        xa = reading.x_primary.values
        records.append(
            SweepRecord(
                alpha=a,
                s_value=reading.s_value,
                residual_norm=residual_norm(xa, yv, op_a),
                reg_value=regularizer_value(xa, cfg.regularizer),
                detail=gradient_energy(reading.x_primary),
            )
        )
        if on_record is not None:
            on_record(len(records) - 1, records[-1], reading)
        log.debug("sweep alpha=%.3e S=%.4f", a, reading.s_value)
    return records


class DegenerateCornerWarning(UserWarning):
    """The L-curve has no curvature to pick a corner from."""


def polyline_curvature(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Signed curvature at interior vertices, parameterized by arc length.

    Entry ``i`` belongs to vertex ``i + 1``. Positive values turn counterclockwise.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    h = np.hypot(np.diff(xs), np.diff(ys))
    h0, h1 = h[:-1], h[1:]
    span = h0 + h1
    with np.errstate(divide="ignore", invalid="ignore"):
        dx = (xs[2:] - xs[:-2]) / span
        dy = (ys[2:] - ys[:-2]) / span
        ddx = 2.0 * ((xs[2:] - xs[1:-1]) / h1 - (xs[1:-1] - xs[:-2]) / h0) / span
        ddy = 2.0 * ((ys[2:] - ys[1:-1]) / h1 - (ys[1:-1] - ys[:-2]) / h0) / span
        kappa = (dx * ddy - dy * ddx) / (dx * dx + dy * dy) ** 1.5
    return np.where(np.isfinite(kappa), kappa, 0.0)


def monotone_run(residuals: Sequence[float], regs: Sequence[float]) -> tuple[int, int]:
    """Longest index range ``[start, stop)`` with residual nondecreasing and penalty nonincreasing.

    Exact regularized solutions always trace such a path; samples that break
    it come from inexact solves.
    """
    r = np.asarray(residuals)
    g = np.asarray(regs)
    n = len(r)
    best = (0, 1)
    start = 0
    for i in range(1, n + 1):
        if i == n or r[i] < r[i - 1] or g[i] > g[i - 1]:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = i
    return best


def prune_close(xs: np.ndarray, ys: np.ndarray, min_spacing: float) -> list[int]:
    """Indices of vertices kept after dropping those that crowd their predecessor.

    A vertex closer than ``min_spacing`` times the total polyline length to
    the last kept vertex is dropped. The last vertex always survives, taking
    the place of a kept vertex that crowds it.
    """
    total = float(np.sum(np.hypot(np.diff(xs), np.diff(ys))))
    keep = [0]
    for i in range(1, len(xs)):
        if math.hypot(xs[i] - xs[keep[-1]], ys[i] - ys[keep[-1]]) >= min_spacing * total:
            keep.append(i)
    if keep[-1] != len(xs) - 1:
        if len(keep) > 1:
            keep[-1] = len(xs) - 1
        else:
            keep.append(len(xs) - 1)
    return keep


def lcurve_select(
    records: Sequence[SweepRecord], curvature_tol: float = 1e-9, min_spacing: float = 0.01
) -> tuple[float, int]:
    """Maximum-curvature point of the (log residual, log penalty) curve.

    Only the longest monotone stretch of the sweep is searched, and its end
    points never qualify. Clusters of nearly coincident points (typically
    iteration-limited solves that all stall at the same spot) are thinned
    with :func:`prune_close` first, since second differences over tiny arcs
    mostly measure noise. If the curve is straight the midpoint is returned
    with a :class:`DegenerateCornerWarning`.
    """
    if len(records) < 5:
        raise ValueError(f"L-curve needs at least 5 records, got {len(records)}")
    res = np.array([r.residual_norm for r in records], dtype=np.float64)
    reg = np.array([r.reg_value for r in records], dtype=np.float64)
    if np.any(res <= 0) or np.any(reg <= 0) or not np.all(np.isfinite(res) & np.isfinite(reg)):
        raise ValueError("L-curve needs strictly positive, finite residual and penalty values")
    start, stop = monotone_run(res, reg)
    if stop - start < 3:
        # nothing monotone to work with; fall back to the full sweep
        start, stop = 0, len(records)
    if (start, stop) != (0, len(records)):
        log.info("L-curve restricted to monotone records %d..%d", start, stop - 1)
    xs, ys = np.log(res[start:stop]), np.log(reg[start:stop])
    keep = prune_close(xs, ys, min_spacing)
    if len(keep) >= 3:
        xs, ys = xs[keep], ys[keep]
    else:
        keep = list(range(stop - start))
    kappa = polyline_curvature(xs, ys)
    if kappa.size == 0 or np.max(np.abs(kappa)) <= curvature_tol:
        idx = (start + stop - 1) // 2
        warnings.warn(
            "L-curve has no detectable corner; returning the midpoint", DegenerateCornerWarning
        )
        return records[idx].alpha, idx
    idx = start + keep[1 + int(np.argmax(kappa))]
    return records[idx].alpha, idx


class BracketError(ValueError):
    """The discrepancy target is not bracketed by ``(alpha_lo, alpha_hi)``."""

    def __init__(self, end: str, alpha: float, residual: float, target: float):
        side = "below" if end == "hi" else "above"
        super().__init__(
            f"invalid bracket: residual {residual:.6g} at alpha_{end}={alpha:.3g} is {side} "
            f"the target {target:.6g}"
        )
        self.end = end
        self.alpha = alpha
        self.residual = residual
        self.target = target


@dataclass(frozen=True)
class DiscrepancyResult:
    alpha: float
    residual: float
    target: float
    steps: int
    converged: bool
    reconstruction: Reconstruction
    brackets: tuple = ()


def discrepancy_target(sigma: float, m: int, tau: float = 1.01) -> float:
    return tau * math.sqrt(m) * sigma


def discrepancy_search(
    y: Sinogram,
    op: ProjectionOperator,
    sigma: float,
    tau: float = 1.01,
    cfg: SolverConfig = SolverConfig(),
    bracket: tuple[float, float] = (1e-10, 1e2),
    rel_tol: float = 0.005,
    max_steps: int = 40,
) -> DiscrepancyResult:
    """Bisection in ``log alpha`` for ``||A x_alpha - y|| = tau sqrt(m) sigma``.

    Every probe is a cold solve, so the residual is a fixed function of alpha.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise ValueError(f"bracket must satisfy 0 < lo < hi, got {bracket}")
    yv = np.asarray(y.values, dtype=np.float64)
    target = discrepancy_target(sigma, yv.size, tau)

    def probe(a):
        rec = solve(y, op, a, cfg)
        return rec, residual_norm(rec.image.values, yv, op)

    def close(r):
        return abs(r - target) <= rel_tol * target

    rec_lo, r_lo = probe(lo)
    if close(r_lo):
        return DiscrepancyResult(lo, r_lo, target, 0, True, rec_lo)
    if r_lo > target:
        raise BracketError("lo", lo, r_lo, target)
    rec_hi, r_hi = probe(hi)
    if close(r_hi):
        return DiscrepancyResult(hi, r_hi, target, 0, True, rec_hi)
    if r_hi < target:
        raise BracketError("hi", hi, r_hi, target)
    brackets = [(lo, hi)]
    mid, rec, r = lo, rec_lo, r_lo
    for step in range(1, max_steps + 1):
        mid = math.sqrt(lo * hi)
        rec, r = probe(mid)
        if close(r):
            return DiscrepancyResult(mid, r, target, step, True, rec, tuple(brackets))
        if r < target:
            lo = mid
        else:
            hi = mid
        brackets.append((lo, hi))
    return DiscrepancyResult(mid, r, target, max_steps, False, rec, tuple(brackets))


def discrepancy_select(
    y: Sinogram,
    op: ProjectionOperator,
    sigma: float,
    tau: float = 1.01,
    cfg: SolverConfig = SolverConfig(),
    bracket: tuple[float, float] = (1e-10, 1e2),
) -> float:
    """Weight whose residual matches the expected noise norm (noise level must be known)."""
    return discrepancy_search(y, op, sigma, tau, cfg, bracket).alpha
