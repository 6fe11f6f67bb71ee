"""Variational reconstruction: ``min_x 0.5 ||Ax - y||^2 + alpha R(x)``.

Two penalties are supported. ``tikhonov`` uses ``R(x) = ||x||_2^2`` and is
solved by conjugate gradients on ``(A^T A + 2 alpha I) x = A^T y``. ``tv``
uses isotropic total variation with forward differences and is solved by a
Chambolle-Pock primal-dual iteration on ``K = [A; grad]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import ImageGrid, Sinogram
from .projector import ProjectionOperator, power_norm

__all__ = [
    "InvalidDataError",
    "SolverConfig",
    "Reconstruction",
    "solve",
    "objective",
    "gradient",
    "divergence",
    "tv_value",
    "regularizer_value",
]

REGULARIZERS = ("tikhonov", "tv")
_DEFAULT_ITERS = {"tv": 300, "tikhonov": 200}
# step-size safety factor on estimated operator norms
NORM_SAFETY = 1.05


class InvalidDataError(ValueError):
    """Input data contains NaN or Inf."""


@dataclass(frozen=True)
class SolverConfig:
    """Inner-solver settings.

    ``max_iters`` and ``nonneg`` left as ``None`` resolve per regularizer:
    300 / 200 iterations for tv / tikhonov, and nonnegativity on for tv only.
    """

    regularizer: str = "tv"
    max_iters: Optional[int] = None
    rel_tol: float = 1e-5
    nonneg: Optional[bool] = None
    record_objective: bool = False
    step_ratio: float = 10.0

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}, got {self.regularizer!r}")
        if self.max_iters is None:
            object.__setattr__(self, "max_iters", _DEFAULT_ITERS[self.regularizer])
        if self.nonneg is None:
            object.__setattr__(self, "nonneg", self.regularizer == "tv")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        if not self.step_ratio > 0:
            raise ValueError(f"step_ratio must be positive, got {self.step_ratio}")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Reconstruction:
    image: ImageGrid
    alpha: float
    objective: float
    iters_used: int
    converged: bool
    history: tuple = ()
    # final (q, p) duals of the tv iteration, reused by warm starts
    duals: Optional[tuple] = field(default=None, repr=False, compare=False)


def gradient(x: np.ndarray) -> np.ndarray:
    """Forward differences, zero across the last row/column. Shape ``(2, h, w)``."""
    g = np.zeros((2,) + x.shape)
    g[0, :-1, :] = x[1:, :] - x[:-1, :]
    g[1, :, :-1] = x[:, 1:] - x[:, :-1]
    return g


def divergence(p: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`gradient`."""
    py, px = p[0], p[1]
    d = np.zeros(py.shape)
    d[:-1, :] += py[:-1, :]
    d[1:, :] -= py[:-1, :]
    d[:, :-1] += px[:, :-1]
    d[:, 1:] -= px[:, :-1]
    return d


def tv_value(x: np.ndarray) -> float:
    g = gradient(x)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


def regularizer_value(x: np.ndarray, regularizer: str) -> float:
    if regularizer == "tv":
        return tv_value(x)
    if regularizer == "tikhonov":
        return float(np.vdot(x, x))
    raise ValueError(f"unknown regularizer {regularizer!r}")


def _check_shapes(op: ProjectionOperator, shape_img=None, shape_sino=None):
    if shape_img is not None and tuple(shape_img) != op.image_shape:
        raise ValueError(f"image shape {shape_img} does not match operator {op.image_shape}")
    if shape_sino is not None and tuple(shape_sino) != op.sino_shape:
        raise ValueError(f"sinogram shape {shape_sino} does not match operator {op.sino_shape}")


def _objective(x, y, op, alpha, regularizer) -> float:
    r = op.forward(x) - y
    return 0.5 * float(np.vdot(r, r)) + alpha * regularizer_value(x, regularizer)


def objective(
    img: ImageGrid, sino: Sinogram, op: ProjectionOperator, alpha: float, regularizer: str
) -> float:
    """Value of the regularized least-squares functional at ``img``."""
    _check_shapes(op, img.shape, sino.shape)
    y = np.asarray(sino.values, dtype=np.float64)
    return _objective(img.values, y, op, alpha, regularizer)


def _joint_norm(op: ProjectionOperator) -> float:
    # ||[A; grad]||, cached on the operator instance
    cached = op.__dict__.get("_joint_norm")
    if cached is None:
        cached = power_norm(
            lambda v: np.concatenate([op.forward(v).ravel(), gradient(v).ravel()]),
            lambda w: op.adjoint(w[: op.sino_shape[0] * op.sino_shape[1]])
            - divergence(w[op.sino_shape[0] * op.sino_shape[1]:].reshape((2,) + op.image_shape)),
            op.image_shape,
            iters=100,
            seed=0,
        )
        op.__dict__["_joint_norm"] = cached
    return cached


def _solve_tv(y, op, alpha, cfg, x0, duals=None):
    # tau * sigma * L^2 = 0.99^2 for any step_ratio
    L = NORM_SAFETY * _joint_norm(op)
    tau = 0.99 * cfg.step_ratio / L
    sigma = 0.99 / (cfg.step_ratio * L)
    if x0 is None:
        x = np.zeros(op.image_shape)
        q = np.zeros(op.sino_shape)
        p = np.zeros((2,) + op.image_shape)
    else:
        x = np.array(x0, dtype=np.float64)
        if cfg.nonneg:
            np.maximum(x, 0.0, out=x)
        if duals is not None:
            q0, p0, alpha0 = duals
            # rescale the tv dual onto the new alpha-ball
            q, p = np.array(q0), p0 * (alpha / alpha0)
        else:
            # duals that make a converged x0 stationary where its gradient is nonzero
            q = op.forward(x) - y
            g = gradient(x)
            mag = np.sqrt(g[0] ** 2 + g[1] ** 2)
            p = np.where(mag > 0, alpha * g / np.where(mag > 0, mag, 1.0), 0.0)
    x_bar = x.copy()
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        q = (q + sigma * (op.forward(x_bar) - y)) / (1.0 + sigma)
        p += sigma * gradient(x_bar)
        mag = np.sqrt(p[0] ** 2 + p[1] ** 2)
        p /= np.maximum(1.0, mag / alpha)
        x_old = x
        x = x - tau * (op.adjoint(q) - divergence(p))
        if cfg.nonneg:
            np.maximum(x, 0.0, out=x)
        x_bar = 2.0 * x - x_old
        if cfg.record_objective:
            history.append(_objective(x, y, op, alpha, "tv"))
        dx = np.linalg.norm(x - x_old)
        nx = np.linalg.norm(x)
        if dx <= cfg.rel_tol * nx or (nx == 0 and dx == 0):
            converged = True
            break
    return x, it, converged, history, (q, p, alpha)


def _solve_tikhonov_cg(y, op, alpha, cfg, x0):
    b = op.adjoint(y)
    nb = np.linalg.norm(b)
    x = np.zeros(op.image_shape) if x0 is None else np.array(x0, dtype=np.float64)
    history = []

    def normal(v):
        return op.adjoint(op.forward(v)) + 2.0 * alpha * v

    if nb == 0:
        return np.zeros(op.image_shape), 0, True, history
    r = b - normal(x)
    d = r.copy()
    rr = float(np.vdot(r, r))
    converged = math.sqrt(rr) <= cfg.rel_tol * nb
    it = 0
    while not converged and it < cfg.max_iters:
        it += 1
        md = normal(d)
        step = rr / float(np.vdot(d, md))
        x += step * d
        r -= step * md
        rr_new = float(np.vdot(r, r))
        if cfg.record_objective:
            history.append(_objective(x, y, op, alpha, "tikhonov"))
        if math.sqrt(rr_new) <= cfg.rel_tol * nb:
            converged = True
            break
        d = r + (rr_new / rr) * d
        rr = rr_new
    return x, it, converged, history


def _solve_tikhonov_nonneg(y, op, alpha, cfg, x0):
    """Accelerated projected gradient with objective-based restart."""
    lip = NORM_SAFETY * op.norm**2 + 2.0 * alpha
    step = 1.0 / lip
    x = np.zeros(op.image_shape) if x0 is None else np.maximum(np.array(x0, dtype=np.float64), 0.0)
    z = x.copy()
    t = 1.0
    f_old = _objective(x, y, op, alpha, "tikhonov")
    history = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        grad = op.adjoint(op.forward(z) - y) + 2.0 * alpha * z
        x_new = np.maximum(z - step * grad, 0.0)
        f_new = _objective(x_new, y, op, alpha, "tikhonov")
        if f_new > f_old:
            # restart momentum from the last accepted iterate
            t = 1.0
            z = x
            grad = op.adjoint(op.forward(z) - y) + 2.0 * alpha * z
            x_new = np.maximum(z - step * grad, 0.0)
            f_new = _objective(x_new, y, op, alpha, "tikhonov")
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        dx = np.linalg.norm(x_new - x)
        nx = np.linalg.norm(x_new)
        x, t, f_old = x_new, t_new, f_new
        if cfg.record_objective:
            history.append(f_new)
        if dx <= cfg.rel_tol * nx or (nx == 0 and dx == 0):
            converged = True
            break
    return x, it, converged, history


def solve(
    sino: Sinogram,
    op: ProjectionOperator,
    alpha: float,
    cfg: SolverConfig = SolverConfig(),
    warm_start: Optional[ImageGrid | Reconstruction] = None,
) -> Reconstruction:
    """Approximate minimizer of the regularized least-squares functional.

    ``warm_start`` may be an image or a previous :class:`Reconstruction`; the
    latter also carries the tv dual variables over, which makes a chain of
    solves along ``alpha`` a continuation of one iteration.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    _check_shapes(op, shape_sino=sino.shape)
    y = np.asarray(sino.values, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise InvalidDataError("sinogram contains NaN or Inf")
    x0 = duals = None
    if isinstance(warm_start, Reconstruction):
        duals = warm_start.duals
        warm_start = warm_start.image
    if warm_start is not None:
        _check_shapes(op, shape_img=warm_start.shape)
        x0 = warm_start.values
    if cfg.regularizer == "tv":
        x, it, conv, hist, duals = _solve_tv(y, op, alpha, cfg, x0, duals)
    else:
        tik = _solve_tikhonov_nonneg if cfg.nonneg else _solve_tikhonov_cg
        x, it, conv, hist = tik(y, op, alpha, cfg, x0)
        duals = None
    if not np.all(np.isfinite(x)):
        raise InvalidDataError("solver diverged to non-finite values")
    obj = _objective(x, y, op, alpha, cfg.regularizer)
    return Reconstruction(
        ImageGrid(x, op.pixel_size), float(alpha), obj, it, conv, tuple(hist), duals
    )
