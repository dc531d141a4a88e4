import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dfdreg.core import AngleRange, Image, Sinogram, disk_image, make_phantom
from dfdreg.exceptions import InvalidArgumentError
from dfdreg.radon import (
    RadonGeometry,
    default_n_offsets,
    fbp,
    fbp_transpose,
    radon_adjoint,
    radon_forward,
    riesz_filter,
)


@pytest.fixture(scope="module")
def g64():
    return RadonGeometry.for_size(64)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_default_offsets():
    assert default_n_offsets(256) == 363
    assert default_n_offsets(128) == 183


def test_geometry_validation_and_json():
    with pytest.raises(InvalidArgumentError):
        RadonGeometry(64, 64, 90)
    with pytest.raises(InvalidArgumentError):
        RadonGeometry(48, 64, 91)
    g = RadonGeometry.for_size(32)
    d = g.to_dict()
    assert set(d) >= {"image_size", "n_angles", "n_offsets", "angle_range", "fbp_calibration"}
    assert RadonGeometry.from_dict(d) == g


def test_zero_maps(g64):
    assert not radon_forward(Image(np.zeros((64, 64))), g64).values.any()
    z = Sinogram(np.zeros((g64.n_angles, g64.n_offsets)))
    assert not radon_adjoint(z, g64).pixels.any()
    assert not fbp(z, g64).pixels.any()


def test_size_mismatch(g64):
    with pytest.raises(InvalidArgumentError):
        radon_forward(Image(np.zeros((32, 32))), g64)
    with pytest.raises(InvalidArgumentError):
        fbp(Sinogram(np.zeros((3, 5))), g64)


def test_disk_chord_lengths():
    n, r = 256, 64.0
    g = RadonGeometry(n, 8, default_n_offsets(n))
    y = radon_forward(disk_image(n, r), g)
    s = y.offsets
    inside = np.abs(s) < 0.9 * r
    chord = 2.0 * np.sqrt(r**2 - s[inside] ** 2)
    err = np.abs(y.values[:, inside] - chord) / chord
    assert err.max() < 0.02


def test_mass_conservation(g64):
    x = make_phantom("shepp_logan", 64)
    y = radon_forward(x, g64)
    mass = x.pixels.sum() * x.pixel_size
    assert np.allclose(y.values.sum(axis=1), mass, rtol=0.01)


def test_single_ray_support():
    n = 64
    g = RadonGeometry(n, 16, default_n_offsets(n))
    vals = np.zeros((g.n_angles, g.n_offsets))
    a, k = 5, g.n_offsets // 2 + 10
    vals[a, k] = 1.0
    img = radon_adjoint(Sinogram(vals), g).pixels
    th = g.angles[a]
    s = k - (g.n_offsets - 1) / 2.0
    c = (n - 1) / 2.0
    yy, xx = np.mgrid[:n, :n] - c
    # perpendicular distance of each pixel from the line; accept either axis convention
    d1 = np.abs(xx * np.cos(th) + yy * np.sin(th) - s)
    d2 = np.abs(xx * np.cos(th) - yy * np.sin(th) - s)
    d3 = np.abs(yy * np.cos(th) + xx * np.sin(th) - s)
    d4 = np.abs(yy * np.cos(th) - xx * np.sin(th) - s)
    support = img != 0
    assert support.any()
    # a pixel lies within one pixel (max-norm) of the line iff its
    # perpendicular distance is at most |cos| + |sin|
    reach = abs(np.cos(th)) + abs(np.sin(th))
    assert min(d[support].max() for d in (d1, d2, d3, d4)) <= reach


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_adjoint_identity(seed):
    g = RadonGeometry(32, 24, default_n_offsets(32))
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(32, 32))
    y = rng.normal(size=(g.n_angles, g.n_offsets))
    rx = radon_forward(Image(x), g).values
    ry = radon_adjoint(Sinogram(y), g).pixels
    scale = np.linalg.norm(rx) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(ry)
    assert abs(np.vdot(rx, y) - np.vdot(x, ry)) <= 1e-10 * scale


def test_fbp_transpose_is_exact(g64):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(64, 64))
    y = rng.normal(size=(g64.n_angles, g64.n_offsets))
    lhs = np.vdot(fbp(Sinogram(y), g64).pixels, x)
    rhs = np.vdot(y, fbp_transpose(Image(x), g64).values)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_linearity(g64):
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(2, 64, 64))
    ya, yb = rng.normal(size=(2, g64.n_angles, g64.n_offsets))
    lhs = radon_forward(Image(2 * a - 3 * b), g64).values
    rhs = 2 * radon_forward(Image(a), g64).values - 3 * radon_forward(Image(b), g64).values
    assert _rel(lhs, rhs) < 1e-12
    lhs = fbp(Sinogram(ya + 0.5 * yb), g64).pixels
    rhs = fbp(Sinogram(ya), g64).pixels + 0.5 * fbp(Sinogram(yb), g64).pixels
    assert _rel(lhs, rhs) < 1e-12
    lhs = riesz_filter(Sinogram(ya - yb)).values
    rhs = riesz_filter(Sinogram(ya)).values - riesz_filter(Sinogram(yb)).values
    assert _rel(lhs, rhs) < 1e-12


def test_riesz_constant_is_zero():
    out = riesz_filter(Sinogram(np.full((3, 91), 2.5)))
    assert np.abs(out.values).max() < 1e-12


def test_riesz_sinusoid_eigenfunction():
    n = 363
    s = np.arange(n) - (n - 1) / 2.0
    for freq in (0.05, 0.12, 0.2):
        row = np.sin(2 * np.pi * freq * s)
        out = riesz_filter(Sinogram(row[None, :])).values[0]
        mid = slice(n // 4, 3 * n // 4)
        expected = 2 * np.pi * freq * row
        assert _rel(out[mid], expected[mid]) < 0.01


def test_fbp_disk_plateau():
    n, r = 128, 32.0
    g = RadonGeometry.for_size(n)
    rec = fbp(radon_forward(disk_image(n, r), g), g).pixels
    c = (n - 1) / 2.0
    yy, xx = np.mgrid[:n, :n] - c
    inside = np.hypot(xx, yy) < 0.8 * r
    assert np.abs(rec[inside] - 1.0).max() < 0.03


def test_fbp_error_decreases_with_angles():
    n = 128
    x = disk_image(n, 40.0, 1.0)
    errs = []
    for na in (128, 256, 512):
        g = RadonGeometry(n, na, default_n_offsets(n))
        errs.append(_rel(fbp(radon_forward(x, g), g).pixels, x.pixels))
    assert errs[0] > errs[1] > errs[2]


def test_rotation_covariance():
    n, na = 64, 64
    g = RadonGeometry(n, na, default_n_offsets(n), AngleRange.FULL_TURN)
    x = make_phantom("shepp_logan", n)
    y = radon_forward(x, g).values
    yr = radon_forward(Image(np.rot90(x.pixels)), g).values
    shift = na // 4  # a quarter turn is a whole number of angle steps
    best = min(_rel(np.roll(y, k, axis=0), yr) for k in (shift, -shift))
    assert best < 0.02
