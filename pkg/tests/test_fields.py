import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmeflow.fields import (ExtrapolationError, GridSpec, ScalarField, VectorField, ball_average, dyadic_radii,
                            grad_array, integral, integrate, interpolate, lap_array, load_snapshot,
                            maximal_functions, save_snapshot)


def test_grid_geometry():
    g = GridSpec.uniform(2, -1.0, 1.0, 16)
    assert g.dim == 2 and g.shape == (16, 16)
    assert g.h == pytest.approx(0.125)
    assert g.points().shape == (256, 2)
    assert g.axes()[0][0] == pytest.approx(-1 + g.h / 2)
    assert g.refined().cells == (32, 32)
    assert GridSpec.from_dict(g.to_dict()) == g


@pytest.mark.parametrize("kwargs", [
    dict(lower=(0.0,), upper=(1.0,), cells=(4,)),
    dict(lower=(0.0, 0.0), upper=(1.0, 2.0), cells=(16, 16)),
    dict(lower=(0.0,), upper=(1.0,), cells=(16,), boundary="reflect"),
])
def test_grid_rejects_bad_input(kwargs):
    with pytest.raises(ValueError):
        GridSpec(**kwargs)


def test_buffer_detection():
    g = GridSpec.uniform(1, 0.0, 1.0, 32)
    v = np.zeros(32)
    v[10:20] = 1.0
    assert g.buffer_ok(v)
    v[1] = 1e-3
    assert not g.buffer_ok(v)
    assert GridSpec.uniform(1, 0.0, 1.0, 32, "periodic").buffer_ok(v)


def test_quadratic_derivatives_exact():
    g = GridSpec.uniform(2, -1.0, 1.0, 32)
    x, y = g.coords()
    v = 3 * x**2 - x * y + 2 * y**2
    grad = grad_array(v, g)
    assert np.allclose(grad[0], 6 * x - y, atol=1e-12)
    assert np.allclose(grad[1], -x + 4 * y, atol=1e-12)
    assert np.allclose(lap_array(v, g), 10.0, atol=1e-9)


def test_periodic_laplacian_of_sine():
    g = GridSpec.uniform(1, 0.0, 2 * math.pi, 256, "periodic")
    x = g.axes()[0]
    err = np.max(np.abs(lap_array(np.sin(x), g) + np.sin(x)))
    assert err < 2 * g.h**2


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5),
       pts=st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=1, max_size=20))
def test_interpolation_reproduces_affine(a, b, c, pts):
    g = GridSpec.uniform(2, -1.0, 1.0, 16)
    x, y = g.coords()
    f = ScalarField(g, a + b * x + c * y)
    pts = np.asarray(pts)
    assert np.allclose(interpolate(f, pts), a + b * pts[:, 0] + c * pts[:, 1], atol=1e-9)


def test_interpolation_vector_and_bounds():
    g = GridSpec.uniform(1, 0.0, 1.0, 16)
    x = g.axes()[0]
    vf = VectorField(g, np.stack([2 * x]))
    assert interpolate(vf, [0.5]) == pytest.approx([1.0])
    with pytest.raises(ExtrapolationError):
        interpolate(ScalarField(g, x), [1.5])


def test_integrals_midpoint():
    g = GridSpec.uniform(1, 0.0, 1.0, 1000)
    x = g.axes()[0]
    assert integral(x, g) == pytest.approx(0.5, abs=1e-14)
    f = ScalarField(g, x)
    assert integrate(f, weight=ScalarField(g, x)) == pytest.approx(1 / 3, abs=1e-6)


def test_integral_is_order_independent():
    rng = np.random.default_rng(3)
    g = GridSpec.uniform(1, 0.0, 1.0, 4096)
    v = rng.standard_normal(4096) * 10.0 ** rng.integers(-8, 8, 4096)
    assert integral(v, g) == integral(v[::-1], g)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-3, 3), r=st.integers(0, 6), periodic=st.booleans(), dim=st.sampled_from([1, 2]))
def test_ball_average_fixes_constants(c, r, periodic, dim):
    g = GridSpec.uniform(dim, 0.0, 1.0, 16, "periodic" if periodic else "truncated")
    v = np.full(g.shape, c)
    avg = ball_average(v, g, r)
    if periodic:
        assert np.allclose(avg, c)
    else:
        # zero padding: interior cells see the full ball
        inner = tuple(slice(r, n - r) for n in g.shape)
        assert np.allclose(avg[inner], c)


def test_ball_average_matches_brute_force():
    rng = np.random.default_rng(0)
    g = GridSpec.uniform(2, 0.0, 1.0, 12)
    v = rng.random(g.shape)
    r = 3
    avg = ball_average(v, g, r)
    i, j = 6, 5
    acc, cnt = 0.0, 0
    for k in range(-r, r + 1):
        for m in range(-r, r + 1):
            if k * k + m * m <= r * r:
                cnt += 1
                if 0 <= i + k < 12 and 0 <= j + m < 12:
                    acc += v[i + k, j + m]
    assert avg[i, j] == pytest.approx(acc / cnt)


def test_maximal_functions_dominate_pointwise():
    g = GridSpec.uniform(1, -2.0, 2.0, 128)
    x = g.axes()[0]
    p = ScalarField(g, np.maximum(1 - x**2, 0.0))
    f, gm = maximal_functions(p)
    gnorm = np.abs(grad_array(p.values, g)[0])
    assert np.all(gm.values >= gnorm - 1e-14)
    assert np.all(f.values >= 0)
    assert dyadic_radii(g) == [0, 1, 2, 4, 8, 16, 32]


def test_snapshot_roundtrip(tmp_path):
    g = GridSpec.uniform(2, -1.0, 1.0, 8)
    f = ScalarField(g, np.arange(64.0).reshape(8, 8) / 7, 0.25, "rho")
    save_snapshot(f, tmp_path / "snap")
    back = load_snapshot(tmp_path / "snap")
    assert back.grid == g and back.t == 0.25 and back.name == "rho"
    assert np.array_equal(back.values, f.values)
