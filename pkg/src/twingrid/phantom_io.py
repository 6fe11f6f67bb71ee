"""Test objects, additive noise, and every file format the toolkit reads or writes.

Sinogram files (``.dxsg``) are little-endian::

    offset  size            field
    0       4               magic b"DXSG"
    4       2   u16         version (1)
    6       4   u32         n_angles
    10      4   u32         n_bins
    14      8   f64         bin_spacing
    22      8*n_angles f64  angles
    ...     4*n_angles*n_bins f32 values, angle-major

Values are persisted as float32, so a sinogram round-trips bit-identically
when its values are float32 to begin with (``load_sinogram`` always returns
float32 values).
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import ImageGrid, Sinogram

__all__ = [
    "shepp_logan",
    "disk_phantom",
    "smooth_phantom",
    "NoiseSpec",
    "add_noise",
    "SinogramFormatError",
    "save_sinogram",
    "load_sinogram",
    "save_image",
    "save_csv",
    "load_csv",
    "TRAJECTORY_FIELDS",
    "SWEEP_FIELDS",
    "COMPARE_FIELDS",
]

MAGIC = b"DXSG"
VERSION = 1
_HEADER = struct.Struct("<4sHIId")

TRAJECTORY_FIELDS = ("step", "alpha", "ssim", "error", "in_band")
SWEEP_FIELDS = ("alpha", "ssim", "residual_norm", "reg_value", "gradient_energy")
COMPARE_FIELDS = ("method", "alpha", "ssim", "gradient_energy", "oracle", "status")

# Toft's modified Shepp-Logan: intensity, semi-axes (a, b), center (x0, y0), tilt in degrees
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def _unit_coords(n: int):
    # pixel centers on [-1, 1], y up
    c = (np.arange(n) - (n - 1) / 2.0) * (2.0 / n)
    yy, xx = np.meshgrid(-c, c, indexing="ij")
    return xx, yy


def shepp_logan(n: int, pixel_size: float | None = None) -> ImageGrid:
    """Modified (high-contrast) 10-ellipse Shepp-Logan phantom, values in [0, 1].

    The phantom spans [-1, 1]^2, so the default pixel size is ``2 / n``.
    """
    if n < 16:
        raise ValueError(f"phantom size must be >= 16, got {n}")
    xx, yy = _unit_coords(n)
    img = np.zeros((n, n))
    for rho, a, b, x0, y0, tilt in _SHEPP_LOGAN:
        t = math.radians(tilt)
        dx, dy = xx - x0, yy - y0
        u = dx * math.cos(t) + dy * math.sin(t)
        v = -dx * math.sin(t) + dy * math.cos(t)
        img[(u / a) ** 2 + (v / b) ** 2 <= 1.0] += rho
    img = np.clip(img, 0.0, 1.0)
    return ImageGrid(img, 2.0 / n if pixel_size is None else pixel_size)


def disk_phantom(n: int, radius: float = 0.7, value: float = 1.0) -> ImageGrid:
    """Indicator of a centered disk; ``radius`` in the [-1, 1] frame."""
    xx, yy = _unit_coords(n)
    return ImageGrid(np.where(xx**2 + yy**2 <= radius**2, value, 0.0), 2.0 / n)


def smooth_phantom(n: int) -> ImageGrid:
    """Sum of a few Gaussian blobs; band-limited enough for interpolation tests."""
    xx, yy = _unit_coords(n)
    blobs = ((1.0, 0.0, 0.0, 0.45), (0.6, 0.3, 0.2, 0.15), (0.5, -0.25, -0.3, 0.2))
    img = np.zeros((n, n))
    for amp, x0, y0, s in blobs:
        img += amp * np.exp(-((xx - x0) ** 2 + (yy - y0) ** 2) / (2 * s * s))
    return ImageGrid(img, 2.0 / n)


@dataclass(frozen=True)
class NoiseSpec:
    sigma_rel: float = 0.05
    seed: int = 0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ValueError(f"only gaussian noise is supported, got {self.kind!r}")
        if self.sigma_rel < 0:
            raise ValueError(f"sigma_rel must be >= 0, got {self.sigma_rel}")


def add_noise(sino: Sinogram, spec: NoiseSpec) -> tuple[Sinogram, float]:
    """Add i.i.d. Gaussian noise with std ``sigma_rel * max(sino)``.

    Returns the noisy sinogram and the absolute per-sample std used.
    """
    clean = np.asarray(sino.values, dtype=np.float64)
    sigma = float(spec.sigma_rel * clean.max()) if clean.size else 0.0
    if sigma == 0:
        return sino, 0.0
    rng = np.random.default_rng(spec.seed)
    noisy = clean + rng.normal(0.0, sigma, size=clean.shape)
    return sino.like(noisy), sigma


class SinogramFormatError(ValueError):
    """Malformed sinogram file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def sinogram_bytes(sino: Sinogram) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, sino.n_angles, sino.n_bins, float(sino.bin_spacing))
    angles = np.asarray(sino.angles, dtype="<f8").tobytes()
    values = np.ascontiguousarray(sino.values, dtype="<f4").tobytes()
    return header + angles + values


def save_sinogram(sino: Sinogram, path) -> Path:
    path = Path(path)
    path.write_bytes(sinogram_bytes(sino))
    return path


def parse_sinogram(data: bytes) -> Sinogram:
    if len(data) < _HEADER.size:
        raise SinogramFormatError(
            f"header needs {_HEADER.size} bytes, file has {len(data)}", len(data)
        )
    magic, version, n_angles, n_bins, spacing = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise SinogramFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise SinogramFormatError(f"unsupported version {version}, expected {VERSION}", 4)
    if n_angles == 0:
        raise SinogramFormatError("n_angles must be positive", 6)
    if n_bins == 0:
        raise SinogramFormatError("n_bins must be positive", 10)
    if not (spacing > 0 and math.isfinite(spacing)):
        raise SinogramFormatError(f"bin_spacing must be positive, got {spacing}", 14)
    off = _HEADER.size
    expected = off + 8 * n_angles + 4 * n_angles * n_bins
    if len(data) != expected:
        raise SinogramFormatError(
            f"expected {expected - off} payload bytes, found {len(data) - off}", len(data)
        )
    angles = np.frombuffer(data, dtype="<f8", count=n_angles, offset=off).astype(np.float64)
    off += 8 * n_angles
    values = np.frombuffer(data, dtype="<f4", count=n_angles * n_bins, offset=off)
    values = values.astype(np.float32).reshape(n_angles, n_bins)
    return Sinogram(values, angles, spacing)


def load_sinogram(path) -> Sinogram:
    return parse_sinogram(Path(path).read_bytes())


def _normalize(values: np.ndarray, levels: int):
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.int64), lo, hi
    q = np.rint((values - lo) / (hi - lo) * levels).astype(np.int64)
    return q, lo, hi


def save_image(img: ImageGrid, path, format: str = "pgm16") -> Path:
    """Min-max normalize to 16 bits and write PGM or PNG, plus a scale sidecar.

    The sidecar ``<name>.scale.txt`` holds ``min=<v> max=<v>``. A constant
    image is written as all zeros.
    """
    path = Path(path)
    q, lo, hi = _normalize(img.values, 65535)
    if format == "pgm16":
        header = f"P5\n{img.width} {img.height}\n65535\n".encode("ascii")
        path.write_bytes(header + q.astype(">u2").tobytes())
    elif format == "png":
        from PIL import Image

        Image.fromarray(q.astype(np.uint16)).save(path, format="PNG")
    else:
        raise ValueError(f"unknown image format {format!r}")
    scale = path.with_name(path.stem + ".scale.txt")
    scale.write_text(f"min={lo!r} max={hi!r}\n")
    return path


def read_pgm16(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(h, w).astype(np.int64)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def save_csv(rows: Iterable[Mapping], path, fields: Sequence[str]) -> Path:
    """Write rows with a header; floats use 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in fields])
    return path


def _parse(s: str):
    if s in ("true", "false"):
        return s == "true"
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def load_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]
