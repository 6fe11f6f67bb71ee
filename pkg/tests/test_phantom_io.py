import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twingrid.geometry import ImageGrid, Sinogram
from twingrid.phantom_io import (
    NoiseSpec,
    SinogramFormatError,
    TRAJECTORY_FIELDS,
    add_noise,
    load_csv,
    load_sinogram,
    parse_sinogram,
    read_pgm16,
    save_csv,
    save_image,
    save_sinogram,
    shepp_logan,
    sinogram_bytes,
)


def test_phantom_basics():
    v = shepp_logan(64).values
    assert v[32, 32] > 0
    assert v[0, 0] == v[0, -1] == v[-1, 0] == v[-1, -1] == 0
    assert v.min() >= 0 and v.max() <= 1
    assert shepp_logan(64).pixel_size == pytest.approx(2 / 64)
    with pytest.raises(ValueError):
        shepp_logan(15)


def test_phantom_mirror_structure():
    # the skull is mirror-symmetric; the inner ellipses are not
    n = 128
    v = shepp_logan(n).values
    diff = np.abs(v - v[:, ::-1]) > 1e-12
    c = (np.arange(n) - (n - 1) / 2) * 2 / n
    yy, xx = np.meshgrid(-c, c, indexing="ij")
    brain = (xx / 0.6624) ** 2 + ((yy + 0.0184) / 0.874) ** 2 <= 1
    assert not diff[~brain].any()
    assert diff.mean() < 0.06


def test_noise_zero_is_identity():
    s = Sinogram(np.ones((3, 4)), np.arange(3) * 0.5)
    out, sigma = add_noise(s, NoiseSpec(0.0, 1))
    assert sigma == 0.0
    np.testing.assert_array_equal(out.values, s.values)


def test_noise_std_matches():
    m = (400, 300)
    clean = Sinogram(np.full(m, 2.0), np.linspace(0, 3, 400))
    noisy, sigma = add_noise(clean, NoiseSpec(0.05, 11))
    assert sigma == pytest.approx(0.1)
    std = np.std(noisy.values - clean.values)
    assert 0.97 * sigma <= std <= 1.03 * sigma


def test_noise_is_seeded():
    clean = Sinogram(np.ones((20, 30)), np.linspace(0, 3, 20))
    a, _ = add_noise(clean, NoiseSpec(0.1, 5))
    b, _ = add_noise(clean, NoiseSpec(0.1, 5))
    c, _ = add_noise(clean, NoiseSpec(0.1, 6))
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_noise_spec_validation():
    with pytest.raises(ValueError):
        NoiseSpec(-0.1)
    with pytest.raises(ValueError):
        NoiseSpec(0.1, kind="poisson")


@settings(max_examples=20, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(1, 12),
    st.floats(0.01, 10.0),
    st.integers(0, 2**32 - 1),
)
def test_sinogram_round_trip(n_angles, n_bins, spacing, seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((n_angles, n_bins)).astype(np.float32)
    angles = np.sort(rng.uniform(0, math.pi, n_angles))
    if np.any(np.diff(angles) <= 0):
        return
    s = Sinogram(vals, angles, spacing)
    back = parse_sinogram(sinogram_bytes(s))
    np.testing.assert_array_equal(back.values, vals)
    np.testing.assert_array_equal(back.angles, angles)
    assert back.bin_spacing == spacing


def test_sinogram_file_round_trip(tmp_path):
    s = Sinogram(np.arange(12, dtype=np.float32).reshape(3, 4), [0.0, 1.0, 2.0], 0.5)
    back = load_sinogram(save_sinogram(s, tmp_path / "s.dxsg"))
    np.testing.assert_array_equal(back.values, s.values)


def _sample_bytes():
    s = Sinogram(np.ones((2, 3), dtype=np.float32), [0.0, 1.0], 1.0)
    return sinogram_bytes(s)


def test_truncated_payload():
    data = _sample_bytes()
    with pytest.raises(SinogramFormatError, match="expected 40 payload bytes, found 36"):
        parse_sinogram(data[:-4])


def test_truncated_header():
    with pytest.raises(SinogramFormatError) as err:
        parse_sinogram(_sample_bytes()[:10])
    assert err.value.offset == 10


def test_zero_angles_rejected():
    data = bytearray(_sample_bytes())
    struct.pack_into("<I", data, 6, 0)
    with pytest.raises(SinogramFormatError) as err:
        parse_sinogram(bytes(data))
    assert err.value.offset == 6


def test_bad_magic_and_version():
    data = bytearray(_sample_bytes())
    data[0:4] = b"XXXX"
    with pytest.raises(SinogramFormatError) as err:
        parse_sinogram(bytes(data))
    assert err.value.offset == 0
    data = bytearray(_sample_bytes())
    struct.pack_into("<H", data, 4, 9)
    with pytest.raises(SinogramFormatError) as err:
        parse_sinogram(bytes(data))
    assert err.value.offset == 4


def test_pgm_min_max_mapping(tmp_path):
    p = save_image(ImageGrid(np.array([[0.0, 1.0], [1.0, 0.0]])), tmp_path / "a.pgm")
    assert read_pgm16(p).tolist() == [[0, 65535], [65535, 0]]
    assert (tmp_path / "a.scale.txt").read_text().strip() == "min=0.0 max=1.0"


def test_constant_image_maps_to_zero(tmp_path):
    p = save_image(ImageGrid(np.full((3, 3), 4.2)), tmp_path / "c.pgm")
    assert np.all(read_pgm16(p) == 0)
    assert "min=4.2 max=4.2" in (tmp_path / "c.scale.txt").read_text()


def test_png_output(tmp_path):
    from PIL import Image

    v = np.linspace(0, 1, 16).reshape(4, 4)
    p = save_image(ImageGrid(v), tmp_path / "g.png", format="png")
    arr = np.array(Image.open(p))
    assert arr.min() == 0 and arr.max() == 65535
    with pytest.raises(ValueError):
        save_image(ImageGrid(v), tmp_path / "g.bmp", format="bmp")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        save_image(ImageGrid(np.zeros((2, 2))), tmp_path / "missing" / "x.pgm")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(allow_nan=False, allow_infinity=False, width=64),
                          st.floats(-1, 1), st.booleans()), min_size=1, max_size=20))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    data = [dict(step=i, alpha=a, ssim=s, error=0.9 - s, in_band=b) for i, (a, s, b) in enumerate(rows)]
    save_csv(data, path, TRAJECTORY_FIELDS)
    back = load_csv(path)
    assert len(back) == len(data)
    for got, want in zip(back, data):
        assert got["step"] == want["step"] and got["in_band"] is want["in_band"]
        for k in ("alpha", "ssim", "error"):
            assert float(got[k]) == want[k]
