"""The incompressible (gamma = infinity) system.

Pressure comes from the obstacle problem on the saturated set
``{rho >= 1 - 1e-6}``: minimise ``sum 1/2 |grad phi|^2 - phi G`` over
``phi >= 0`` vanishing off the set, solved by red-black projected SOR.
Densities are then moved by the same upwind transport as the finite-gamma
scheme, and any overshoot above 1 is pushed downhill by a conservative
redistribution that keeps each donor cell's species fractions.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .fields import GridSpec, ScalarField, integral
from .model import GrowthModel, PressureLaw, SpeciesState, mix_growth
from .solver import (SolverConfig, face_velocities, nutrient_step, outflow_fraction, run,
                     upwind_divergence)

log = logging.getLogger(__name__)

SATURATION = 1.0 - 1e-6
OVERFILL = 1.0 + 1e-6


class RedistributionError(RuntimeError):
    """Excess density could not be placed anywhere in the box."""


@dataclass(frozen=True)
class ObstacleConfig:
    tol_ob: float = 1e-10
    max_sweeps: int = 200_000
    omega_sor: float | None = None  # None: pick from the saturated set's extent
    check_every: int = 10

    def __post_init__(self):
        if not self.tol_ob > 0:
            raise ValueError("tol_ob must be positive")
        if self.omega_sor is not None and not 1.0 <= self.omega_sor < 2.0:
            raise ValueError("omega_sor must lie in [1, 2)")


@dataclass
class ObstacleResult:
    pressure: ScalarField
    sweeps: int
    residual: float
    converged: bool
    omega: float
    energies: list = field(default_factory=list)


def saturated_set(rho):
    return np.asarray(rho) >= SATURATION


def _auto_omega(active):
    if not active.any():
        return 1.0
    extent = max(int(np.ptp(np.nonzero(active)[k])) + 1 for k in range(active.ndim))
    return min(2.0 / (1.0 + math.sin(math.pi / (extent + 1))), 1.99)


def obstacle_energy(p, g, grid: GridSpec):
    """Discrete ``sum 1/2 |grad p|^2 - p G`` with zero values outside the box."""
    total = 0.0
    for axis in range(grid.dim):
        if grid.periodic:
            d = np.roll(p, -1, axis) - p
        else:
            pad = [(0, 0)] * p.ndim
            pad[axis] = (1, 1)
            d = np.diff(np.pad(p, pad), axis=axis)
        total += 0.5 * math.fsum((d.ravel() / grid.h) ** 2)
    return (total - math.fsum((p * g).ravel())) * grid.cell_volume


def complementarity_residual(p, g, active, grid: GridSpec):
    """``max |min(p, h^2 (-lap p - G) / 2d)|`` over the saturated set.

    The second entry is the correction one projected Jacobi sweep would make,
    so the residual is in pressure units and its roundoff floor is
    ``eps * max p`` rather than ``eps * max p / h^2``.
    """
    if not active.any():
        return 0.0
    lap = _dirichlet_laplacian(p, grid)
    r = np.minimum(p, (-lap - g) * (grid.h**2 / (2 * grid.dim)))
    return float(np.max(np.abs(r[active])))


def _dirichlet_laplacian(p, grid):
    out = np.zeros_like(p)
    for axis in range(grid.dim):
        if grid.periodic:
            out += np.roll(p, 1, axis) + np.roll(p, -1, axis) - 2 * p
        else:
            pad = [(0, 0)] * p.ndim
            pad[axis] = (1, 1)
            q = np.pad(p, pad)
            n = p.shape[axis]
            out += (np.take(q, np.arange(0, n), axis=axis) + np.take(q, np.arange(2, n + 2), axis=axis) - 2 * p)
    return out / grid.h**2


def solve_complementarity(rho: ScalarField, growth: ScalarField, cfg: ObstacleConfig = ObstacleConfig(),
                          initial=None, track_energy=False) -> ObstacleResult:
    """Obstacle pressure for density ``rho`` and mixed growth ``growth``."""
    grid = rho.grid
    active = saturated_set(rho.values)
    g = np.asarray(growth.values, dtype=np.float64)
    p = np.zeros(grid.shape) if initial is None else np.where(active, np.maximum(initial, 0.0), 0.0)
    p = np.ascontiguousarray(p, dtype=np.float64)
    omega = cfg.omega_sor if cfg.omega_sor is not None else _auto_omega(active)
    if not active.any():
        return ObstacleResult(ScalarField(grid, p, rho.t, "p"), 0, 0.0, True, omega)
    source = np.ascontiguousarray(grid.h**2 * g)
    act = np.ascontiguousarray(active, dtype=np.uint8)
    energies = [obstacle_energy(p, g, grid)] if track_energy else []
    residual = math.inf
    sweeps = 0
    while sweeps < cfg.max_sweeps:
        kernels.psor_sweep(p, source, act, omega, grid.periodic)
        sweeps += 1
        if track_energy:
            energies.append(obstacle_energy(p, g, grid))
        if sweeps % cfg.check_every == 0:
            residual = complementarity_residual(p, g, active, grid)
            if residual <= cfg.tol_ob:
                break
    else:
        residual = complementarity_residual(p, g, active, grid)
    converged = residual <= cfg.tol_ob
    if not converged:
        log.warning("PSOR hit the sweep cap with residual %.3e", residual)
    return ObstacleResult(ScalarField(grid, p, rho.t, "p"), sweeps, residual, converged, omega, energies)


# ---------------------------------------------------------------------------
# saturation repair


def _shift(a, axis, direction, periodic):
    """``out[j] = a[j - direction]`` (zero fill when not periodic)."""
    if periodic:
        return np.roll(a, direction, axis)
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if direction > 0:
        src[axis], dst[axis] = slice(None, -direction), slice(direction, None)
    else:
        src[axis], dst[axis] = slice(-direction, None), slice(None, direction)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _edge_mask(grid, axis, direction):
    """False on the cells whose neighbour in ``direction`` lies outside the box."""
    ok = np.ones(grid.shape, dtype=bool)
    if not grid.periodic:
        edge = [slice(None)] * grid.dim
        edge[axis] = -1 if direction > 0 else 0
        ok[tuple(edge)] = False
    return ok


def _neighbour(a, grid, axis, direction, fill):
    """``out[j] = a[j + direction]`` along ``axis``; ``fill`` beyond the box."""
    if grid.periodic:
        return np.roll(a, -direction, axis)
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if direction > 0:
        src[axis], dst[axis] = slice(1, None), slice(None, -1)
    else:
        src[axis], dst[axis] = slice(None, -1), slice(1, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def room_distance(total, grid):
    """Graph (taxicab) distance in cells from each cell to the nearest unsaturated cell."""
    full = total >= SATURATION
    if not (~full).any():
        return np.full(total.shape, float(total.size + 1))
    if grid.periodic:
        tiled = np.tile(full, (3,) * grid.dim)
        dist = ndimage.distance_transform_cdt(tiled, metric="taxicab")
        core = tuple(slice(n, 2 * n) for n in total.shape)
        return dist[core].astype(float)
    return ndimage.distance_transform_cdt(full, metric="taxicab").astype(float)


def redistribute(rho_i, p, grid: GridSpec, max_sweeps=None):
    """Push mass above 1 to neighbours; fractions of each donor are kept.

    Excess only moves to neighbours that are strictly closer to a cell with
    spare room, so it always drains; among those, the split follows the
    pressure drop (the direction of ``-grad p``), or is even where ``p`` is flat.
    """
    rho_i = rho_i.copy()
    total = rho_i.sum(axis=0)
    if integral(total, grid) > grid.cell_volume * total.size * OVERFILL:
        raise RedistributionError("mass exceeds the saturated capacity of the box")
    dirs = [(axis, direction) for axis in range(grid.dim) for direction in (1, -1)]
    edges = [_edge_mask(grid, a, d) for a, d in dirs]
    drops = [np.where(e, np.maximum(p - _neighbour(p, grid, a, d, 0.0), 0.0), 0.0)
             for (a, d), e in zip(dirs, edges)]
    max_sweeps = max_sweeps or 20 * sum(grid.cells)
    for _ in range(max_sweeps):
        total = rho_i.sum(axis=0)
        excess = np.maximum(total - 1.0, 0.0)
        if excess.max(initial=0.0) <= OVERFILL - 1.0:
            return rho_i
        dist = room_distance(total, grid)
        if dist.max() > total.size:
            raise RedistributionError("no unsaturated cell reachable")
        closer = [e & (_neighbour(dist, grid, a, d, np.inf) < dist) for (a, d), e in zip(dirs, edges)]
        weighted = [c * w for c, w in zip(closer, drops)]
        wsum = sum(weighted)
        csum = sum(c.astype(float) for c in closer)
        frac = np.where(total > 0, rho_i / np.where(total > 0, total, 1.0), 0.0)
        moved = np.zeros_like(rho_i)
        for (axis, direction), c, w in zip(dirs, closer, weighted):
            share = np.where(wsum > 0, w / np.where(wsum > 0, wsum, 1.0),
                             c / np.where(csum > 0, csum, 1.0))
            amount = excess * share
            moved -= frac * amount
            moved += np.stack([_shift(f * amount, axis, direction, grid.periodic) for f in frac])
        rho_i = np.maximum(rho_i + moved, 0.0)
    raise RedistributionError("saturation repair did not settle within the sweep cap")


# ---------------------------------------------------------------------------
# stepping


@dataclass
class IncompressibleInfo:
    obstacle: list = field(default_factory=list)
    substeps: int = 0
    converged: bool = True


def _pressure(state, model, obstacle_cfg, n):
    rho = ScalarField(state.grid, np.minimum(state.rho, 1.0 + 1e-6), state.t, "rho", density=True)
    p = state.p
    res = None
    for _ in range(2):  # growth depends on p; one refresh is enough at first order
        g = mix_growth(model.evaluate(p, n), state.rho_i)
        res = solve_complementarity(rho, ScalarField(state.grid, g, state.t, "G"), obstacle_cfg, initial=p)
        p = res.pressure.values
    return p, res


def step_incompressible(state: SpeciesState, model: GrowthModel, cfg: SolverConfig,
                        obstacle_cfg: ObstacleConfig = ObstacleConfig(), nutrient=None, dt=None, info=None):
    """One step of the Hele-Shaw system with sub-cycling on the Courant bound."""
    total_dt = cfg.dt if dt is None else dt
    if state.rho.max(initial=0.0) > 1.0 + 1e-6:
        raise ValueError("incompressible state requires rho <= 1")
    grid = state.grid
    done = 0.0
    t0 = state.t
    while done < total_dt * (1 - 1e-12):
        p, res = _pressure(state, model, obstacle_cfg, state.n)
        vel = face_velocities(p, grid)
        sub = total_dt - done
        speed = sum(float(np.max(np.abs(v), initial=0.0)) for v in vel)
        sub = min(sub, cfg.cfl * grid.h / max(speed, 1e-12))
        if model.bound > 0:
            sub = min(sub, 0.5 / model.bound)
        while float(np.max(outflow_fraction(vel, grid, sub))) + sub * model.bound > 1.0:
            sub *= 0.5
        g_i = model.evaluate(p, state.n)
        rho_i = np.stack([r - sub * upwind_divergence(r, vel, grid) + sub * r * g
                          for r, g in zip(state.rho_i, g_i)])
        if rho_i.min(initial=0.0) < -1e-10:
            from .solver import SchemeFailure
            raise SchemeFailure(f"negative density {rho_i.min():.3e} at t={state.t}")
        rho_i = redistribute(np.maximum(rho_i, 0.0), p, grid)
        n = nutrient_step(state.n, rho_i, nutrient, grid, sub) if nutrient is not None else state.n
        last = total_dt - done - sub <= 1e-14 * total_dt
        done = total_dt if last else done + sub
        state = SpeciesState(grid, t0 + total_dt if last else state.t + sub, rho_i, p, n, state.law)
        if info is not None:
            info.substeps += 1
            info.converged &= res.converged
    # final pressure consistent with the final density
    p, res = _pressure(state, model, obstacle_cfg, state.n)
    if info is not None:
        info.converged &= res.converged
    return state.evolve(p=p)


def incompressible_stepper(model, cfg, obstacle_cfg=ObstacleConfig(), nutrient=None):
    """Adapter with the ``(state, dt, info)`` signature expected by :func:`solver.run`."""
    def stepper(state, dt, info):
        return step_incompressible(state, model, cfg, obstacle_cfg, nutrient, dt=dt, info=info)
    return stepper


def incompressible_state(grid, rho_i, model, n=None, t=0.0, obstacle_cfg=ObstacleConfig()):
    """State with ``gamma = infinity`` and the obstacle pressure filled in."""
    rho_i = np.atleast_1d(np.asarray(rho_i, dtype=float))
    if rho_i.ndim == grid.dim:
        rho_i = rho_i[None]
    n = np.zeros(grid.shape) if n is None else np.asarray(n, float)
    state = SpeciesState(grid, float(t), rho_i, np.zeros(grid.shape), n, PressureLaw(math.inf))
    p, _ = _pressure(state, model, obstacle_cfg, n)
    return state.evolve(p=p)


# ---------------------------------------------------------------------------
# gamma sweep


@dataclass
class SweepRow:
    gamma: float
    defect: float
    p_distance: float
    rho_distance: float
    initial_distance: float
    runtime: float


def gamma_family(p0, rho_i_ref, gamma):
    """Initial data ``rho_gamma = p0^(1/gamma)`` split by the reference fractions."""
    rho_ref = rho_i_ref.sum(axis=0)
    c = np.where(rho_ref > 0, rho_i_ref / np.where(rho_ref > 0, rho_ref, 1.0), 0.0)
    if math.isinf(gamma):
        base = (p0 > 0).astype(float)
    else:
        base = np.maximum(p0, 0.0) ** (1.0 / gamma)
    return c * base


def gamma_sweep(grid, p0, rho_i_ref, gammas, horizon, model, cfg: SolverConfig,
                obstacle_cfg=ObstacleConfig(), nutrient=None, n0=None):
    """Run the finite-gamma solver for every gamma and compare with the incompressible run.

    Distances are space-time norms over the shared step grid; the defect is
    ``||p (1 - rho)||_{L^1(Q_T)}``.
    """
    gammas = list(gammas)
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise ValueError("gamma list must be increasing")
    n0 = np.zeros(grid.shape) if n0 is None else n0
    t0 = time.perf_counter()
    hs_init = incompressible_state(grid, gamma_family(p0, rho_i_ref, math.inf), model, n0, 0.0, obstacle_cfg)
    hs = run(hs_init, horizon, model, cfg, nutrient, stepper=incompressible_stepper(model, cfg, obstacle_cfg, nutrient))
    hs_time = time.perf_counter() - t0
    ref_rho = np.stack([d.sum(axis=0) for d in hs.densities])
    ref_p = np.stack(hs.pressures)
    times = np.asarray(hs.times)
    weights = _time_weights(times)
    rows = []
    for gamma in gammas:
        start = time.perf_counter()
        law = PressureLaw(gamma)
        init_i = gamma_family(p0, rho_i_ref, gamma)
        state = SpeciesState.from_densities(grid, init_i, n0, law)
        traj = run(state, horizon, model, cfg, nutrient)
        if len(traj.times) != len(times) or np.max(np.abs(np.asarray(traj.times) - times)) > 1e-9:
            raise RuntimeError("finite-gamma and incompressible runs produced different step grids")
        rho = np.stack([d.sum(axis=0) for d in traj.densities])
        p = np.stack(traj.pressures)
        defect = _space_time(np.abs(p * (1.0 - rho)), weights, grid)
        p_dist = math.sqrt(_space_time((p - ref_p) ** 2, weights, grid))
        rho_dist = _space_time(np.abs(rho - ref_rho), weights, grid)
        init_dist = integral(np.abs(init_i - hs_init.rho_i).sum(axis=0), grid)
        rows.append(SweepRow(gamma, defect, p_dist, rho_dist, init_dist, time.perf_counter() - start))
    rows.append(SweepRow(math.inf, 0.0, 0.0, 0.0, 0.0, hs_time))
    return rows, hs


def _time_weights(times):
    """Trapezoid weights on the recorded step times."""
    w = np.zeros(len(times))
    if len(times) > 1:
        d = np.diff(times)
        w[:-1] += d / 2
        w[1:] += d / 2
    return w


def _space_time(values, weights, grid):
    return math.fsum(wt * integral(v, grid) for wt, v in zip(weights, values))


def write_sweep(rows, directory, meta=None, timings=False):
    """CSV table plus JSON metadata; wall-clock columns only when ``timings`` is set."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "gamma_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma", "defect", "p_distance", "rho_distance", "initial_distance"]
                   + (["runtime"] if timings else []))
        for r in rows:
            w.writerow([("inf" if math.isinf(r.gamma) else repr(r.gamma)), repr(r.defect), repr(r.p_distance),
                        repr(r.rho_distance), repr(r.initial_distance)] + ([f"{r.runtime:.3f}"] if timings else []))
    info = dict(meta or {})
    info["gammas"] = ["inf" if math.isinf(r.gamma) else r.gamma for r in rows]
    (directory / "gamma_sweep.json").write_text(json.dumps(info, indent=2, sort_keys=True, default=str))
    return directory
