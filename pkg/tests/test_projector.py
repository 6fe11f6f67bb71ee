import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twingrid import make_operator
from twingrid.geometry import ImageGrid, make_parallel_geometry
from twingrid.phantom_io import disk_phantom
from twingrid.projector import (
    ProjectionOperator,
    back_project,
    estimate_operator_norm,
    forward_project,
    power_norm,
)


def joseph_loop(img, angles, n_bins, spacing, pixel):
    """Scalar reference: sample each ray once per row or column of its dominant axis."""
    n = img.shape[0]
    half = (n - 1) / 2.0
    out = np.zeros((len(angles), n_bins))
    for a, phi in enumerate(angles):
        c, s = math.cos(phi), math.sin(phi)
        for b in range(n_bins):
            t = (b - (n_bins - 1) / 2.0) * spacing
            total = 0.0
            for k in range(n):
                if abs(c) >= abs(s):
                    y = (half - k) * pixel
                    u = ((t - y * s) / c) / pixel + half
                    j = math.floor(u)
                    f = u - j
                    for jj, w in ((j, 1 - f), (j + 1, f)):
                        if 0 <= jj < n:
                            total += w * img[k, jj] * pixel / abs(c)
                else:
                    x = (k - half) * pixel
                    v = half - ((t - x * c) / s) / pixel
                    i = math.floor(v)
                    f = v - i
                    for ii, w in ((i, 1 - f), (i + 1, f)):
                        if 0 <= ii < n:
                            total += w * img[ii, k] * pixel / abs(s)
            out[a, b] = total
    return out


@pytest.mark.parametrize("offset", [0.0, 0.37])
def test_matches_scalar_reference(offset):
    n, views = 12, 7
    op = make_operator(n, views, pixel_size=0.5, angle_offset=offset)
    img = np.random.default_rng(3).random((n, n))
    ref = joseph_loop(img, op.geometry.effective_angles, op.geometry.n_bins, 0.5, 0.5)
    np.testing.assert_allclose(op.forward(img), ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(
    n=st.integers(min_value=4, max_value=24),
    views=st.integers(min_value=1, max_value=12),
    offset=st.floats(min_value=-1.0, max_value=1.0),
    seed=st.integers(min_value=0, max_value=10**6),
)
def test_adjoint_identity(n, views, offset, seed):
    op = make_operator(n, views, angle_offset=offset)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.image_shape)
    y = rng.standard_normal(op.sino_shape)
    lhs = np.vdot(op.forward(x), y)
    rhs = np.vdot(x, op.adjoint(y))
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_disk_chord_lengths():
    n = 128
    img = disk_phantom(n, radius=0.7)
    op = make_operator(n, 8, pixel_size=img.pixel_size)
    sino = op.forward(img.values)
    t = op.geometry.bin_centers()
    chord = 2.0 * np.sqrt(np.clip(0.7**2 - t**2, 0, None))
    inner = np.abs(t) < 0.6
    err = sino[:, inner] - chord[inner]
    assert np.sqrt(np.mean(err**2)) <= 0.02 * np.sqrt(np.mean(chord[inner] ** 2))


def test_ones_image_at_zero_angle():
    # a ray at phi=0 crosses the full grid height of the square
    n, p = 16, 0.25
    op = make_operator(n, 4, pixel_size=p)
    sino = op.forward(np.ones((n, n)))
    centre = np.abs(op.geometry.bin_centers()) < (n / 2 - 1) * p
    np.testing.assert_allclose(sino[0, centre], n * p, rtol=1e-12)


def test_ones_image_at_45_degrees():
    # the central diagonal ray has length sqrt(2) * side
    n = 16
    op = make_operator(n, 4)
    sino = op.forward(np.ones((n, n)))
    mid = np.argmin(np.abs(op.geometry.bin_centers()))
    assert sino[1, mid] == pytest.approx(math.sqrt(2) * n, rel=0.07)


def test_one_hot_footprint_is_local():
    n = 21
    op = make_operator(n, 9)
    x = np.zeros((n, n))
    x[10, 10] = 1.0
    sino = op.forward(x)
    t = op.geometry.bin_centers()
    for row in sino:
        hit = t[row > 0]
        assert hit.size >= 1
        assert np.all(np.abs(hit) <= 1.5)
        # each view deposits its weight p/max(|cos|,|sin|) once, spread linearly
        assert row.sum() > 0


def test_forward_project_shape_check():
    op = make_operator(8, 3)
    with pytest.raises(ValueError):
        forward_project(op, ImageGrid(np.zeros((9, 9))))
    with pytest.raises(ValueError):
        back_project(op, op.sinogram(np.zeros((3, 2))) if False else
                     make_operator(9, 3).sinogram(np.zeros(make_operator(9, 3).sino_shape)))


def test_square_grids_only():
    with pytest.raises(ValueError):
        ProjectionOperator(make_parallel_geometry(3, 8), (4, 5))


def test_norm_matches_dense_svd():
    op = make_operator(8, 10)
    dense = op.matrix.toarray()
    sv = np.linalg.svd(dense, compute_uv=False)[0]
    assert op.norm == pytest.approx(sv, rel=0.01)
    assert op.norm <= sv * (1 + 1e-9)


def test_norm_estimate_nondecreasing_in_iterations():
    op = make_operator(16, 12)
    ests = [estimate_operator_norm(op, iters=k) for k in (1, 2, 5, 10, 50)]
    assert all(b >= a - 1e-12 for a, b in zip(ests, ests[1:]))


def test_power_norm_of_zero_map():
    z = lambda v: np.zeros_like(v)
    assert power_norm(z, z, (4, 4)) == 0.0
    assert estimate_operator_norm(ProjectionOperator(make_parallel_geometry(1, 1), (0, 0))) == 0.0


def test_rotated_operator_only_shifts_angles():
    op = make_operator(10, 5)
    rot = op.rotated(0.25)
    np.testing.assert_allclose(rot.geometry.effective_angles, op.geometry.angles + 0.25)
    assert rot.sino_shape == op.sino_shape


def square_chord(phi, t, half):
    """Length of the line x cos(phi) + y sin(phi) = t inside [-half, half]^2."""
    c, s = math.cos(phi), math.sin(phi)
    # points p = t*(c, s) + u*(-s, c); clip u to the slab of each axis
    lo, hi = -np.inf, np.inf
    for base, d in ((t * c, -s), (t * s, c)):
        if abs(d) < 1e-15:
            if abs(base) > half:
                return 0.0
            continue
        a, b = sorted(((-half - base) / d, (half - base) / d))
        lo, hi = max(lo, a), min(hi, b)
    return max(0.0, hi - lo)


@pytest.mark.parametrize("phi_deg", [0.0, 10.0, 30.0, 45.0, 70.0, 100.0, 135.0])
def test_ones_image_matches_intersection_length(phi_deg):
    n, p = 64, 2.0 / 64
    phi = math.radians(phi_deg)
    geom = make_parallel_geometry(1, 91, p, angle_offset=phi)
    op = ProjectionOperator(geom, (n, n), p)
    sino = op.forward(np.ones((n, n)))[0]
    # rays lying on an edge of the square are ambiguous, so use the open square
    ref = np.array([square_chord(phi, t, 1.0 - 1e-9) for t in geom.bin_centers()])
    hit = ref > 0
    err = np.sqrt(np.mean((sino[hit] - ref[hit]) ** 2))
    assert err <= 0.02 * np.sqrt(np.mean(ref[hit] ** 2))


def test_linear_and_zero_preserving(rng):
    op = make_operator(20, 9)
    x, z = rng.standard_normal((2, 20, 20))
    np.testing.assert_allclose(op.forward(2 * x - 3 * z), 2 * op.forward(x) - 3 * op.forward(z),
                               atol=1e-12)
    assert not op.forward(np.zeros((20, 20))).any()
    assert not op.adjoint(np.zeros(op.sino_shape)).any()


def test_single_view_backprojection_footprint():
    op = make_operator(8, 1, angle_offset=0.3)
    dense = op.matrix.toarray()
    for b in range(op.geometry.n_bins):
        e = np.zeros(op.sino_shape)
        e[0, b] = 1.0
        bp = op.adjoint(e).ravel()
        np.testing.assert_allclose(bp, dense[b], atol=1e-15)
        # the footprint is the set of pixels this one ray interpolates from
        assert set(np.flatnonzero(bp)) == set(np.flatnonzero(dense[b]))
