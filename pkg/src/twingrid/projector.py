"""Parallel-beam Joseph projector and its exact adjoint.

Each ray is sampled once per pixel row (or column) along its dominant axis,
with linear interpolation across the other axis and a step-length weight.
The interpolation weights are generated once per operator and held in a
sparse matrix so that ``back_project`` applies exactly the transpose of
``forward_project``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse

from .geometry import ImageGrid, ProjectionGeometry, Sinogram, make_parallel_geometry

__all__ = [
    "ProjectionOperator",
    "make_operator",
    "joseph_weights",
    "forward_project",
    "back_project",
    "power_norm",
    "estimate_operator_norm",
]


def _interp_pairs(u: np.ndarray, n: int):
    """Split fractional indices ``u`` into (index, weight) pairs inside [0, n)."""
    i0 = np.floor(u)
    f = u - i0
    i0 = i0.astype(np.int64)
    idx = np.stack([i0, i0 + 1])
    w = np.stack([1.0 - f, f])
    valid = (idx >= 0) & (idx < n) & (w > 0)
    return idx, w, valid


def joseph_weights(
    geometry: ProjectionGeometry, n: int, pixel_size: float
) -> sparse.csr_matrix:
    """Assemble the system matrix for an ``n x n`` grid.

    Rows are indexed ``angle * n_bins + bin``; columns are row-major pixels.
    """
    n_bins = geometry.n_bins
    s = geometry.bin_centers()
    c = (np.arange(n) - (n - 1) / 2.0) * pixel_size
    rows_all, cols_all, vals_all = [], [], []
    for a, phi in enumerate(geometry.effective_angles):
        cos_p, sin_p = math.cos(phi), math.sin(phi)
        ray = a * n_bins + np.arange(n_bins)
        if abs(cos_p) >= abs(sin_p):
            # ray x*cos + y*sin = s, step through rows
            y = -c  # y of row i
            x = (s[:, None] - y[None, :] * sin_p) / cos_p
            u = x / pixel_size + (n - 1) / 2.0
            idx, w, valid = _interp_pairs(u, n)
            pix = np.arange(n)[None, None, :] * n + idx
            step = pixel_size / abs(cos_p)
        else:
            x = c
            y = (s[:, None] - x[None, :] * cos_p) / sin_p
            v = (n - 1) / 2.0 - y / pixel_size
            idx, w, valid = _interp_pairs(v, n)
            pix = idx * n + np.arange(n)[None, None, :]
            step = pixel_size / abs(sin_p)
        r = np.broadcast_to(ray[None, :, None], idx.shape)
        rows_all.append(r[valid])
        cols_all.append(pix[valid])
        vals_all.append(w[valid] * step)
    m = geometry.n_angles * n_bins
    mat = sparse.coo_matrix(
        (np.concatenate(vals_all), (np.concatenate(rows_all), np.concatenate(cols_all))),
        shape=(m, n * n),
    )
    return mat.tocsr()


@dataclass(frozen=True, eq=False)
class ProjectionOperator:
    """The pair (A, A^T) for one geometry on an ``n x n`` grid."""

    geometry: ProjectionGeometry
    image_shape: tuple[int, int]
    pixel_size: float = 1.0

    def __post_init__(self):
        h, w = self.image_shape
        if h != w:
            raise ValueError(f"only square grids are supported, got {self.image_shape}")
        object.__setattr__(self, "image_shape", (int(h), int(w)))

    @property
    def n(self) -> int:
        return self.image_shape[0]

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.geometry.n_angles, self.geometry.n_bins)

    @cached_property
    def matrix(self) -> sparse.csr_matrix:
        return joseph_weights(self.geometry, self.n, self.pixel_size)

    @cached_property
    def _matrix_t(self) -> sparse.csr_matrix:
        return self.matrix.T.tocsr()

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Raw-array forward projection, ``(n, n) -> (n_angles, n_bins)``."""
        return (self.matrix @ x.ravel()).reshape(self.sino_shape)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return (self._matrix_t @ y.ravel()).reshape(self.image_shape)

    def rotated(self, theta: float) -> "ProjectionOperator":
        """Same scan with every view angle shifted by ``theta``."""
        return ProjectionOperator(self.geometry.with_offset(theta), self.image_shape, self.pixel_size)

    @cached_property
    def norm(self) -> float:
        return estimate_operator_norm(self, iters=100, seed=0)

    def sinogram(self, values: np.ndarray) -> Sinogram:
        return Sinogram(values, self.geometry.angles, self.geometry.bin_spacing)


def make_operator(
    n: int,
    n_angles: int = 180,
    n_bins: int | None = None,
    pixel_size: float = 1.0,
    bin_spacing: float | None = None,
    angle_offset: float = 0.0,
) -> ProjectionOperator:
    """Operator with the default scan: ``ceil(sqrt(2) n)`` bins of one pixel width."""
    if bin_spacing is None:
        bin_spacing = pixel_size
    if n_bins is None:
        n_bins = math.ceil(math.sqrt(2.0) * n * pixel_size / bin_spacing)
    geom = make_parallel_geometry(n_angles, n_bins, bin_spacing, angle_offset)
    return ProjectionOperator(geom, (n, n), pixel_size)


def forward_project(op: ProjectionOperator, img: ImageGrid) -> Sinogram:
    if img.shape != op.image_shape:
        raise ValueError(f"image shape {img.shape} does not match operator {op.image_shape}")
    return op.sinogram(op.forward(img.values))


def back_project(op: ProjectionOperator, sino: Sinogram) -> ImageGrid:
    if sino.shape != op.sino_shape:
        raise ValueError(f"sinogram shape {sino.shape} does not match operator {op.sino_shape}")
    return ImageGrid(op.adjoint(np.asarray(sino.values, dtype=np.float64)), op.pixel_size)


def power_norm(apply, apply_adjoint, shape, iters: int = 50, seed: int = 0) -> float:
    """Power-method estimate of the spectral norm of a linear map."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(shape)
    nv = np.linalg.norm(v)
    if nv == 0:
        return 0.0
    v /= nv
    est = 0.0
    for _ in range(iters):
        av = apply(v)
        est = max(est, float(np.linalg.norm(av)))
        w = apply_adjoint(av)
        nw = np.linalg.norm(w)
        if nw == 0:
            break
        v = w / nw
    return est


def estimate_operator_norm(op: ProjectionOperator, iters: int = 100, seed: int = 0) -> float:
    """Estimate of ``||A||_2``; callers add their own safety factor."""
    if 0 in op.image_shape:
        return 0.0
    return power_norm(op.forward, op.adjoint, op.image_shape, iters, seed)
