"""Image grids, parallel-beam scan geometry, grid rotation and the FOV mask.

Physical coordinates have the origin at the grid center with ``x`` growing
to the right (column index) and ``y`` growing upward (decreasing row index).
A positive rotation angle is counterclockwise in that frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "ImageGrid",
    "Sinogram",
    "ProjectionGeometry",
    "FovMask",
    "make_parallel_geometry",
    "rotate_image",
    "make_fov_mask",
    "draw_theta",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ImageGrid:
    """Square pixel image; ``values`` has shape ``(height, width)``."""

    values: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"image values must be 2-D, got shape {v.shape}")
        if v.shape[0] != v.shape[1]:
            raise ValueError(f"image must be square, got {v.shape[1]}x{v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("image contains NaN or Inf")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def like(self, values: np.ndarray) -> "ImageGrid":
        return ImageGrid(values, self.pixel_size)


@dataclass(frozen=True)
class Sinogram:
    """Projection data, ``values`` has shape ``(n_angles, n_bins)`` (angle-major)."""

    values: np.ndarray
    angles: np.ndarray
    bin_spacing: float = 1.0

    def __post_init__(self):
        v = np.array(self.values)
        if v.dtype.kind != "f":
            v = v.astype(np.float64)
        angles = np.array(self.angles, dtype=np.float64).ravel()
        if v.ndim != 2 or v.shape[0] != angles.size:
            raise ValueError(
                f"sinogram values of shape {v.shape} do not match {angles.size} angles"
            )
        if not self.bin_spacing > 0:
            raise ValueError(f"bin_spacing must be positive, got {self.bin_spacing}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "angles", _frozen(angles))

    @property
    def n_angles(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def like(self, values: np.ndarray) -> "Sinogram":
        return Sinogram(values, self.angles, self.bin_spacing)


@dataclass(frozen=True)
class ProjectionGeometry:
    angles: np.ndarray
    n_bins: int
    bin_spacing: float = 1.0
    angle_offset: float = 0.0

    def __post_init__(self):
        angles = np.array(self.angles, dtype=np.float64).ravel()
        if angles.size < 1:
            raise ValueError("geometry needs at least one view angle")
        if np.any(np.diff(angles) <= 0):
            raise ValueError("view angles must be strictly increasing")
        if angles[0] < 0 or angles[-1] >= math.pi:
            raise ValueError("view angles must lie in [0, pi)")
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be >= 1, got {self.n_bins}")
        if not self.bin_spacing > 0:
            raise ValueError(f"bin_spacing must be positive, got {self.bin_spacing}")
        object.__setattr__(self, "angles", _frozen(angles))
        object.__setattr__(self, "n_bins", int(self.n_bins))
        object.__setattr__(self, "bin_spacing", float(self.bin_spacing))
        object.__setattr__(self, "angle_offset", float(self.angle_offset))

    @property
    def n_angles(self) -> int:
        return self.angles.size

    @property
    def effective_angles(self) -> np.ndarray:
        return self.angles + self.angle_offset

    def bin_centers(self) -> np.ndarray:
        return (np.arange(self.n_bins) - (self.n_bins - 1) / 2.0) * self.bin_spacing

    def covers(self, width: int, pixel_size: float) -> bool:
        """True if the detector spans the image diagonal."""
        return self.n_bins * self.bin_spacing >= math.sqrt(2.0) * width * pixel_size - 1e-9

    def with_offset(self, theta: float) -> "ProjectionGeometry":
        return ProjectionGeometry(self.angles, self.n_bins, self.bin_spacing, theta)


@dataclass(frozen=True)
class FovMask:
    inside: np.ndarray
    radius_fraction: float = 0.95

    @property
    def width(self) -> int:
        return self.inside.shape[1]

    @property
    def height(self) -> int:
        return self.inside.shape[0]

    @property
    def count(self) -> int:
        return int(self.inside.sum())


def make_parallel_geometry(
    n_angles: int, n_bins: int, bin_spacing: float = 1.0, angle_offset: float = 0.0
) -> ProjectionGeometry:
    """Equispaced parallel-beam scan over ``[0, pi)``."""
    if n_angles < 1 or n_bins < 1:
        raise ValueError(f"counts must be positive (n_angles={n_angles}, n_bins={n_bins})")
    if not bin_spacing > 0:
        raise ValueError(f"bin_spacing must be positive, got {bin_spacing}")
    angles = np.arange(n_angles) * (math.pi / n_angles)
    return ProjectionGeometry(angles, n_bins, bin_spacing, angle_offset)


def _center_coords(n: int) -> np.ndarray:
    return np.arange(n) - (n - 1) / 2.0


def rotate_image(img: ImageGrid, theta: float) -> ImageGrid:
    """Rotate counterclockwise by ``theta`` radians about the grid center.

    Bilinear interpolation; output pixels whose source point leaves the grid
    are set to zero.
    """
    if img.width != img.height:
        raise ValueError("rotate_image needs a square image")
    if theta == 0:
        return img
    n = img.width
    c = _center_coords(n)
    # output pixel center in (x, y), x = col offset, y = -row offset
    yy, xx = np.meshgrid(-c, c, indexing="ij")
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # source = R(-theta) @ target
    xs = cos_t * xx + sin_t * yy
    ys = -sin_t * xx + cos_t * yy
    cols = xs + (n - 1) / 2.0
    rows = (n - 1) / 2.0 - ys
    out = ndimage.map_coordinates(
        img.values, [rows, cols], order=1, mode="constant", cval=0.0, prefilter=False
    )
    return img.like(out)


def make_fov_mask(width: int, height: int, radius_fraction: float = 0.95) -> FovMask:
    """Disk inscribed in the grid, scaled by ``radius_fraction``."""
    if not (0 < radius_fraction <= 1):
        raise ValueError(f"radius_fraction must be in (0, 1], got {radius_fraction}")
    if width < 1 or height < 1:
        raise ValueError("mask dimensions must be positive")
    yy, xx = np.meshgrid(_center_coords(height), _center_coords(width), indexing="ij")
    r = radius_fraction * width / 2.0
    inside = xx**2 + yy**2 <= r * r
    return FovMask(_frozen(inside), float(radius_fraction))


def draw_theta(seed: int, theta_range_deg: tuple[float, float] = (10.0, 20.0)) -> float:
    """Secondary-grid rotation in radians, uniform on ``theta_range_deg``."""
    lo, hi = theta_range_deg
    rng = np.random.default_rng(seed)
    return math.radians(rng.uniform(lo, hi))
