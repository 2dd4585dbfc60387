"""Compiled and NumPy kernels must agree bit for bit."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmeflow import _kernels_py, kernels

try:
    from pmeflow import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

BACKENDS = [_kernels_py] + ([_kernels_c] if _kernels_c is not None else [])
needs_ext = pytest.mark.skipif(_kernels_c is None, reason="compiled extension not built")


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    if _kernels_c is not None:
        assert kernels.BACKEND == "cython"


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_psor_projects_and_pins(impl):
    rng = np.random.default_rng(1)
    p = rng.random(32)
    active = np.ones(32, dtype=np.uint8)
    active[:4] = 0
    src = -rng.random(32)
    impl.psor_sweep(p, src, active, 1.5, False)
    assert np.all(p >= 0) and np.all(p[:4] == 0)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_psor_converges_to_discrete_parabola(impl):
    n = 64
    h = 1.0 / n
    p = np.zeros(n)
    src = np.full(n, h * h * 2.0)
    act = np.ones(n, dtype=np.uint8)
    act[0] = act[-1] = 0
    for _ in range(20000):
        if impl.psor_sweep(p, src, act, 1.9, False) < 1e-15:
            break
    # -p'' = 2 with p = 0 at cells 0 and n-1: exact for the quadratic
    x = np.arange(n) * h
    exact = (x - x[0]) * (x[-1] - x)
    assert np.max(np.abs(p - exact)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.sampled_from([1, 2]), periodic=st.booleans(),
       half=st.integers(4, 12), omega=st.floats(1.0, 1.95))
@needs_ext
def test_psor_parity(seed, dim, periodic, half, omega):
    rng = np.random.default_rng(seed)
    shape = (2 * half,) * dim  # even extents keep the colouring consistent on periodic grids
    p = rng.random(shape)
    src = rng.standard_normal(shape) * 1e-2
    act = (rng.random(shape) > 0.2).astype(np.uint8)
    a, b = p.copy(), p.copy()
    ca = _kernels_py.psor_sweep(a, src, act, omega, periodic)
    cb = _kernels_c.psor_sweep(b, src, act, omega, periodic)
    assert np.array_equal(a, b) and ca == cb


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.sampled_from([1, 2]), periodic=st.booleans(),
       m=st.integers(1, 200))
@needs_ext
def test_interp_and_deposit_parity(seed, dim, periodic, m):
    rng = np.random.default_rng(seed)
    shape = (12,) * dim
    lower, h = (-1.0,) * dim, 2.0 / 12
    vals = rng.standard_normal(shape)
    pts = rng.uniform(-1.0, 1.0, (m, dim))
    w = rng.random(m)
    assert np.array_equal(_kernels_py.interp_linear(vals, lower, h, periodic, pts),
                          _kernels_c.interp_linear(vals, lower, h, periodic, pts))
    assert np.array_equal(_kernels_py.cic_deposit(shape, lower, h, periodic, pts, w),
                          _kernels_c.cic_deposit(shape, lower, h, periodic, pts, w))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.sampled_from([1, 2]), periodic=st.booleans())
def test_deposit_conserves_mass(seed, dim, periodic):
    rng = np.random.default_rng(seed)
    shape = (10,) * dim
    pts = rng.uniform(0.0, 1.0, (50, dim))
    w = rng.random(50)
    for impl in BACKENDS:
        out = impl.cic_deposit(shape, (0.0,) * dim, 0.1, periodic, pts, w)
        assert out.sum() == pytest.approx(w.sum(), rel=1e-13)
        assert np.all(out >= 0)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
def test_interp_hits_nodes(impl):
    vals = np.arange(16.0).reshape(4, 4) ** 2
    lower, h = (0.0, 0.0), 0.25
    i, j = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
    pts = np.stack([(i.ravel() + 0.5) * h, (j.ravel() + 0.5) * h], axis=1)
    assert np.allclose(impl.interp_linear(vals, lower, h, False, pts), vals.ravel())


def test_fallback_forced_by_environment():
    import os
    import subprocess
    import sys
    env = dict(os.environ, PMEFLOW_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from pmeflow import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
