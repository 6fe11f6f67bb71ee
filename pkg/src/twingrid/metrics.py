"""Masked SSIM, the inter-grid consistency reading, and a gradient-energy detail proxy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .geometry import FovMask, ImageGrid, Sinogram, make_fov_mask, rotate_image
from .projector import ProjectionOperator
from .solvers import Reconstruction, SolverConfig, gradient, solve

__all__ = [
    "SsimParams",
    "ConsistencyReading",
    "ssim",
    "ssim_support",
    "measure_consistency",
    "gradient_energy",
]


@dataclass(frozen=True)
class SsimParams:
    """Gaussian-window SSIM constants; ``dynamic_range=None`` means per-comparison."""

    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: Optional[float] = None

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window size must be odd and positive, got {self.window}")
        if not (self.sigma > 0 and self.k1 > 0 and self.k2 > 0):
            raise ValueError("sigma, k1 and k2 must be positive")
        if self.dynamic_range is not None and not self.dynamic_range > 0:
            raise ValueError(f"dynamic_range must be positive, got {self.dynamic_range}")

    def kernel(self) -> np.ndarray:
        r = self.window // 2
        t = np.arange(-r, r + 1, dtype=np.float64)
        k = np.exp(-(t**2) / (2.0 * self.sigma**2))
        return k / k.sum()


@dataclass(frozen=True)
class ConsistencyReading:
    s_value: float
    x_primary: ImageGrid
    x_secondary_aligned: ImageGrid
    theta: float
    primary: Optional[Reconstruction] = None
    secondary: Optional[Reconstruction] = None


def _blur(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(a, k, axis=0, mode="constant")
    return ndimage.correlate1d(out, k, axis=1, mode="constant")


def ssim_support(mask: FovMask, window: int = 11) -> np.ndarray:
    """Pixels of ``mask`` whose whole ``window x window`` neighbourhood is inside it."""
    inside = np.asarray(mask.inside, dtype=bool)
    return ndimage.minimum_filter(inside, size=window, mode="constant", cval=False)


def ssim(a: ImageGrid, b: ImageGrid, mask: FovMask, params: SsimParams = SsimParams()) -> float:
    """Mean SSIM over pixels whose full window lies inside the mask.

    Without a fixed ``dynamic_range`` both images are first mapped to [0, 1]
    by the min and max of their masked values taken together.
    """
    xa = a.values if isinstance(a, ImageGrid) else np.asarray(a, dtype=np.float64)
    xb = b.values if isinstance(b, ImageGrid) else np.asarray(b, dtype=np.float64)
    if xa.shape != xb.shape or xa.shape != mask.inside.shape:
        raise ValueError(f"shape mismatch: {xa.shape}, {xb.shape}, mask {mask.inside.shape}")
    support = ssim_support(mask, params.window)
    if not support.any():
        raise ValueError("mask has no pixel whose full SSIM window fits inside it")
    inside = np.asarray(mask.inside, dtype=bool)
    if params.dynamic_range is None:
        both = np.concatenate([xa[inside], xb[inside]])
        L = float(both.max() - both.min())
        if L == 0.0:
            # both images constant and equal inside the mask
            return 1.0
        # map the pair onto [0, 1] together, so a shared affine change cancels
        lo = float(both.min())
        xa = (xa - lo) / L
        xb = (xb - lo) / L
        L = 1.0
    else:
        L = params.dynamic_range
    c1 = (params.k1 * L) ** 2
    c2 = (params.k2 * L) ** 2
    k = params.kernel()
    mu_a = _blur(xa, k)
    mu_b = _blur(xb, k)
    var_a = _blur(xa * xa, k) - mu_a * mu_a
    var_b = _blur(xb * xb, k) - mu_b * mu_b
    cov = _blur(xa * xb, k) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = num[support] / den[support]
    return float(np.clip(smap.mean(), -1.0, 1.0))


def measure_consistency(
    y: Sinogram,
    op_a: ProjectionOperator,
    op_b: ProjectionOperator,
    theta: float,
    alpha: float,
    cfg: SolverConfig = SolverConfig(),
    mask: Optional[FovMask] = None,
    params: SsimParams = SsimParams(),
    warm_start: tuple = (None, None),
) -> ConsistencyReading:
    """Solve on both grids, derotate the secondary solution, and compare.

    ``warm_start`` holds one start (image or reconstruction) per grid.
    """
    if mask is None:
        mask = make_fov_mask(op_a.n, op_a.n)
    rec_a = solve(y, op_a, alpha, cfg, warm_start[0])
    rec_b = solve(y, op_b, alpha, cfg, warm_start[1])
    aligned = rotate_image(rec_b.image, -theta)
    s = ssim(rec_a.image, aligned, mask, params)
    return ConsistencyReading(s, rec_a.image, aligned, theta, rec_a, rec_b)


def gradient_energy(img: ImageGrid) -> float:
    """l2 norm of the forward-difference gradient field."""
    v = img.values if isinstance(img, ImageGrid) else np.asarray(img, dtype=np.float64)
    return float(np.linalg.norm(gradient(v)))
