import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmeflow import hele_shaw as hs
from pmeflow.analytic import poisson_cap_1d, poisson_cap_radial
from pmeflow.fields import GridSpec, ScalarField, integral
from pmeflow.model import GrowthModel
from pmeflow.solver import SolverConfig, run


def cap_problem(cells, radius_cells):
    grid = GridSpec.uniform(1, -1.0, 1.0, cells)
    x = grid.axes()[0]
    radius = x[cells // 2 + radius_cells]
    rho = np.where(np.abs(x) < radius - 1e-12, 1.0, 0.5)
    return grid, x, radius, rho


def test_obstacle_matches_parabolic_cap():
    grid, x, radius, rho = cap_problem(64, 16)
    cfg = hs.ObstacleConfig(tol_ob=1e-12)
    res = hs.solve_complementarity(ScalarField(grid, rho), ScalarField(grid, np.full(64, 3.0)), cfg,
                                   track_energy=True)
    assert res.converged
    assert np.max(np.abs(res.pressure.values - poisson_cap_1d(x, radius, 3.0))) < 1e-9
    assert all(b <= a + 1e-14 for a, b in zip(res.energies, res.energies[1:]))
    assert hs.complementarity_residual(res.pressure.values, np.full(64, 3.0), rho >= 1, grid) < 1e-9


def test_obstacle_negative_growth_projects_to_zero():
    grid, x, _, rho = cap_problem(64, 10)
    res = hs.solve_complementarity(ScalarField(grid, rho), ScalarField(grid, np.full(64, -1.0)))
    assert np.all(res.pressure.values == 0)


def test_obstacle_radial_cap():
    grid = GridSpec.uniform(2, -1.0, 1.0, 48)
    r2 = grid.radius2()
    rho = np.where(r2 < 0.5**2, 1.0, 0.0)
    res = hs.solve_complementarity(ScalarField(grid, rho), ScalarField(grid, np.ones(grid.shape)),
                                   hs.ObstacleConfig(tol_ob=1e-11))
    exact = poisson_cap_radial(r2, 0.5, 1.0)
    # the staircase boundary costs O(h) in the cap height
    assert np.max(np.abs(res.pressure.values - exact)) < 2 * grid.h * exact.max() / 0.5 + 1e-3
    assert res.pressure.values[rho < 1].max() == 0


def bfs_distance(full, periodic):
    n = full.shape
    dist = np.full(n, np.inf)
    q = deque()
    for idx in zip(*np.nonzero(~full)):
        dist[idx] = 0
        q.append(idx)
    while q:
        cur = q.popleft()
        for axis in range(len(n)):
            for d in (-1, 1):
                nb = list(cur)
                nb[axis] += d
                if periodic:
                    nb[axis] %= n[axis]
                elif not 0 <= nb[axis] < n[axis]:
                    continue
                nb = tuple(nb)
                if dist[nb] > dist[cur] + 1:
                    dist[nb] = dist[cur] + 1
                    q.append(nb)
    return dist


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.sampled_from([1, 2]), periodic=st.booleans(),
       density=st.floats(0.3, 0.97))
def test_room_distance_is_graph_distance(seed, dim, periodic, density):
    rng = np.random.default_rng(seed)
    grid = GridSpec.uniform(dim, 0.0, 1.0, 10, "periodic" if periodic else "truncated")
    total = np.where(rng.random(grid.shape) < density, 1.0, 0.2)
    if total.min() >= 1:
        total.flat[0] = 0.0
    assert np.array_equal(hs.room_distance(total, grid), bfs_distance(total >= hs.SATURATION, periodic))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), dim=st.sampled_from([1, 2]))
def test_redistribution_caps_and_conserves(seed, dim):
    rng = np.random.default_rng(seed)
    grid = GridSpec.uniform(dim, 0.0, 1.0, 12)
    rho_i = rng.random((2,) + grid.shape) * 0.4
    rho_i[0][(slice(4, 7),) * dim] = 1.1
    p = rng.random(grid.shape)
    out = hs.redistribute(rho_i, p, grid)
    assert out.sum(axis=0).max() <= hs.OVERFILL
    assert out.min() >= 0
    for i in range(2):
        assert integral(out[i], grid) == pytest.approx(integral(rho_i[i], grid), rel=1e-12)


def test_redistribution_rejects_overfull_box():
    grid = GridSpec.uniform(1, 0.0, 1.0, 10)
    with pytest.raises(hs.RedistributionError):
        hs.redistribute(np.full((1, 10), 1.2), np.zeros(10), grid)


def test_incompressible_step_keeps_constraint():
    grid = GridSpec.uniform(1, -2.0, 2.0, 128)
    x = grid.axes()[0]
    rho = np.stack([(np.abs(x + 0.4) < 0.3).astype(float), (np.abs(x - 0.3) < 0.3).astype(float)])
    model = GrowthModel.from_specs([{"preset": "linear-homeostatic"}] * 2, p_h=1.0)
    cfg = SolverConfig(dt=0.01)
    state = hs.incompressible_state(grid, rho, model)
    traj = run(state, 0.2, model, cfg, stepper=hs.incompressible_stepper(model, cfg))
    for d, p in zip(traj.densities, traj.pressures):
        tot = d.sum(axis=0)
        assert tot.max() <= hs.OVERFILL
        assert np.max(np.abs(p * (1 - np.minimum(tot, 1.0)))) < 1e-5
        assert p.max() <= model.p_h * (1 + 1e-6)
    assert integral(traj.final.rho, grid) > integral(rho.sum(axis=0), grid)


def test_gamma_family_limits():
    p0 = np.array([0.0, 0.25, 1.0])
    ref = np.stack([np.array([0.0, 1.0, 0.5]), np.array([0.0, 0.0, 0.5])])
    out = hs.gamma_family(p0, ref, 2.0)
    assert np.allclose(out.sum(axis=0), [0.0, 0.5, 1.0])
    assert np.allclose(out[0], [0.0, 0.5, 0.5])
    assert np.allclose(hs.gamma_family(p0, ref, math.inf).sum(axis=0), [0.0, 1.0, 1.0])


def test_sweep_table(tmp_path):
    grid = GridSpec.uniform(1, -2.0, 2.0, 64)
    x = grid.axes()[0]
    p0 = np.maximum(0.8 * (1 - (x / 0.6) ** 2), 0.0)
    rho_ref = (p0 > 0).astype(float)[None]
    model = GrowthModel.from_specs([{"preset": "linear-homeostatic"}], p_h=1.0)
    rows, ref = hs.gamma_sweep(grid, p0, rho_ref, [5.0, 20.0], 0.1, model, SolverConfig(dt=0.01))
    assert [r.gamma for r in rows] == [5.0, 20.0, math.inf]
    assert rows[1].defect < rows[0].defect
    with pytest.raises(ValueError):
        hs.gamma_sweep(grid, p0, rho_ref, [20.0, 5.0], 0.1, model, SolverConfig(dt=0.01))
    hs.write_sweep(rows, tmp_path)
    first = (tmp_path / "gamma_sweep.csv").read_text()
    assert "runtime" not in first
    hs.write_sweep(rows, tmp_path, timings=True)
    assert "runtime" in (tmp_path / "gamma_sweep.csv").read_text()
