"""Finite-gamma time integration.

Each time step runs a fixed-point loop over ``m``:

1. freeze fractions ``c_i`` and the mixed growth ``G^m`` from the iterate;
2. solve the pressure equation
   ``(p - p^n)/dt - gamma (p_m + eps_m) lap p = |grad p_m|^2 + gamma p_m G^m``
   with the diffusion coefficient lagged;
3. move every ``rho_i`` by first-order upwind fluxes along ``-grad p_{m+1}``
   plus the explicit source ``rho_i G_i(p_{m+1}, n_m)``;
4. advance the nutrient with implicit diffusion and explicit consumption.

After the loop the pressure is reset to ``rho**gamma`` so the constitutive law
holds exactly and transport stays in flux form.
"""
from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import factorized

from .fields import GridSpec, SupportBufferWarning, grad_array, integral, load_snapshot, save_snapshot, ScalarField
from .model import (GrowthModel, NutrientModel, PressureLaw, SpeciesState, fractions, mix_growth,
                    pressure_from_density)

log = logging.getLogger(__name__)


class SchemeFailure(RuntimeError):
    """The discrete update produced a negative density."""


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    cfl: float = 0.5
    tol_fp: float = 1e-10
    max_iter: int = 100
    eps0: float = 1e-8
    eps_min: float = 1e-8
    tol_lin: float = 1e-12
    linear_solver: str = "auto"
    max_halvings: int = 12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if not self.tol_fp > 0:
            raise ValueError("tol_fp must be positive")
        if self.max_iter < 2:
            raise ValueError("max_iter must be at least 2")
        if self.linear_solver not in ("auto", "cg", "direct"):
            raise ValueError("linear_solver must be auto, cg or direct")

    def epsilon(self, m):
        """Pressure floor of fixed-point iteration ``m`` (1-based)."""
        return max(self.eps0 / m, self.eps_min)


@dataclass(frozen=True)
class MollifierSpec:
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k >= 1 required")

    @property
    def floor(self):
        return 1.0 / self.k

    @property
    def width(self):
        return 1.0 / self.k


@dataclass
class StepInfo:
    t: float
    dt: float
    substeps: int
    iterations: list = field(default_factory=list)
    converged: bool = True
    residual: float = 0.0


# ---------------------------------------------------------------------------
# linear algebra helpers


@functools.lru_cache(maxsize=16)
def _neg_laplacian(grid: GridSpec, neumann: bool):
    """Sparse ``-lap`` (times h^2 removed): Dirichlet zero outside the box, or Neumann."""
    mats = []
    for n in grid.cells:
        main = 2.0 * np.ones(n)
        off = -np.ones(n - 1)
        m = sp.diags([off, main, off], [-1, 0, 1], format="lil")
        if grid.periodic:
            m[0, n - 1] = -1.0
            m[n - 1, 0] = -1.0
        elif neumann:
            m[0, 0] = 1.0
            m[n - 1, n - 1] = 1.0
        mats.append(m.tocsr() / grid.h**2)
    if len(mats) == 1:
        return mats[0]
    ix = sp.identity(grid.cells[0], format="csr")
    iy = sp.identity(grid.cells[1], format="csr")
    return (sp.kron(mats[0], iy) + sp.kron(ix, mats[1])).tocsr()


def _banded_1d(grid: GridSpec, diag_extra):
    n = grid.cells[0]
    inv = 1.0 / grid.h**2
    ab = np.zeros((3, n))
    ab[0, 1:] = -inv
    ab[1, :] = 2 * inv + diag_extra
    ab[2, :-1] = -inv
    return ab


def _solve_spd(grid, diag_extra, rhs, x0, cfg: SolverConfig):
    """Solve ``(diag(diag_extra) - lap) x = rhs`` (Dirichlet outside the box)."""
    method = cfg.linear_solver
    if method == "auto":
        method = "direct" if grid.dim == 1 and not grid.periodic else "cg"
    if method == "direct":
        if grid.dim == 1 and not grid.periodic:
            return solve_banded((1, 1), _banded_1d(grid, diag_extra.ravel()), rhs.ravel()).reshape(grid.shape)
        a = (_neg_laplacian(grid, False) + sp.diags(diag_extra.ravel())).tocsc()
        return sp.linalg.spsolve(a, rhs.ravel()).reshape(grid.shape)
    a = (_neg_laplacian(grid, False) + sp.diags(diag_extra.ravel())).tocsr()
    x, ok = pcg(a, rhs.ravel(), x0.ravel(), cfg.tol_lin, 20 * a.shape[0])
    if not ok:
        log.warning("pressure CG did not reach tol_lin")
    return x.reshape(grid.shape)


def _dot(a, b):
    # numpy's pairwise sum: fixed order, no BLAS threading
    return float(np.sum(a * b))


def pcg(a, b, x0, rtol, maxiter):
    """Jacobi-preconditioned CG whose reductions do not depend on the thread count."""
    inv_diag = 1.0 / a.diagonal()
    x = x0.copy()
    r = b - a @ x
    bnorm = math.sqrt(_dot(b, b))
    if bnorm == 0.0:
        return np.zeros_like(b), True
    z = inv_diag * r
    d = z.copy()
    rz = _dot(r, z)
    for _ in range(maxiter):
        if math.sqrt(_dot(r, r)) <= rtol * bnorm:
            return x, True
        ad = a @ d
        alpha = rz / _dot(d, ad)
        x += alpha * d
        r -= alpha * ad
        z = inv_diag * r
        rz_new = _dot(r, z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x, math.sqrt(_dot(r, r)) <= rtol * bnorm


@functools.lru_cache(maxsize=32)
def _heat_factor(grid: GridSpec, coef: float):
    a = (sp.identity(int(np.prod(grid.shape)), format="csc") + coef * _neg_laplacian(grid, True)).tocsc()
    return factorized(a)


def nutrient_step(n, rho_i, nutrient: NutrientModel, grid: GridSpec, dt):
    """Implicit diffusion, explicit consumption: ``(I - dt alpha lap) n' = n - dt n sum beta_i rho_i``."""
    if not nutrient.enabled:
        return n
    rhs = n - dt * n * nutrient.consumption(rho_i)
    if nutrient.alpha == 0:
        return rhs
    solve = _heat_factor(grid, float(dt * nutrient.alpha))
    return solve(rhs.ravel()).reshape(grid.shape)


# ---------------------------------------------------------------------------
# transport


def face_velocities(p, grid: GridSpec):
    """``-dp/dx`` on cell faces; entry ``i`` sits between cells ``i`` and ``i+1``.

    Truncated grids carry ``n-1`` interior faces per axis (boundary faces are
    closed); periodic grids carry ``n`` faces including the wrap face.
    """
    out = []
    for axis in range(grid.dim):
        if grid.periodic:
            out.append(-(np.roll(p, -1, axis) - p) / grid.h)
        else:
            out.append(-np.diff(p, axis=axis) / grid.h)
    return out


def upwind_divergence(rho, vel, grid: GridSpec):
    """Flux-form divergence of the donor-cell flux ``rho v``."""
    div = np.zeros_like(rho)
    for axis, v in enumerate(vel):
        if grid.periodic:
            flux = np.maximum(v, 0.0) * rho + np.minimum(v, 0.0) * np.roll(rho, -1, axis)
            div += (flux - np.roll(flux, 1, axis)) / grid.h
        else:
            lo = [slice(None)] * rho.ndim
            hi = [slice(None)] * rho.ndim
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            flux = np.maximum(v, 0.0) * rho[tuple(lo)] + np.minimum(v, 0.0) * rho[tuple(hi)]
            pad = [(0, 0)] * rho.ndim
            pad[axis] = (1, 1)
            full = np.pad(flux, pad)
            div += (np.take(full, np.arange(1, rho.shape[axis] + 1), axis=axis)
                    - np.take(full, np.arange(0, rho.shape[axis]), axis=axis)) / grid.h
    return div


def outflow_fraction(vel, grid: GridSpec, dt):
    """Fraction of each cell's content leaving through its faces in one step."""
    shape = grid.shape
    out = np.zeros(shape)
    for axis, v in enumerate(vel):
        pos = np.maximum(v, 0.0)
        neg = np.maximum(-v, 0.0)
        if grid.periodic:
            out += pos + np.roll(neg, 1, axis)
        else:
            pad = [(0, 0)] * len(shape)
            pad[axis] = (0, 1)
            out += np.pad(pos, pad)
            pad[axis] = (1, 0)
            out += np.pad(neg, pad)
    return out * dt / grid.h


def max_speed(vel):
    return sum(float(np.max(np.abs(v), initial=0.0)) for v in vel)


# ---------------------------------------------------------------------------
# initial data


def _bump_kernel(grid: GridSpec, width):
    """Discrete, unit-sum smooth bump ``exp(-1/(1-r^2))`` of radius ``width``."""
    r_cells = int(math.floor(width / grid.h))
    if r_cells < 1:
        return None
    offs = np.arange(-r_cells, r_cells + 1) * grid.h
    mesh = np.meshgrid(*([offs] * grid.dim), indexing="ij")
    r2 = sum(m**2 for m in mesh) / width**2
    k = np.where(r2 < 1, np.exp(-1.0 / np.maximum(1 - r2, 1e-300)), 0.0)
    return k / k.sum()


def convolve(values, kernel, grid: GridSpec):
    from scipy import ndimage

    mode = "wrap" if grid.periodic else "constant"
    return ndimage.correlate(values, kernel, mode=mode, cval=0.0)


def mollify_initial_data(rho_i0, n0, spec: MollifierSpec, grid: GridSpec, law: PressureLaw):
    """``rho_i -> floor e^{-|x|^2} + eta_w * rho_i`` and ``n -> eta_w * n`` with ``floor = width = 1/k``."""
    rho_i0 = np.atleast_1d(np.asarray(rho_i0, dtype=float))
    if rho_i0.ndim == grid.dim:
        rho_i0 = rho_i0[None]
    kern = _bump_kernel(grid, spec.width)
    if kern is None:
        warnings.warn("mollifier width below grid spacing; convolution is the identity",
                      UserWarning, stacklevel=2)
        smooth = rho_i0.copy()
        n_s = np.asarray(n0, dtype=float).copy()
    else:
        smooth = np.stack([convolve(r, kern, grid) for r in rho_i0])
        n_s = convolve(np.asarray(n0, dtype=float), kern, grid)
    floor = spec.floor * np.exp(-grid.radius2())
    rho_i = np.maximum(smooth, 0.0) + floor
    return SpeciesState.from_densities(grid, rho_i, np.maximum(n_s, 0.0), law)


def subsolution_floor(delta, gamma, theta, t, r2):
    """``delta^gamma exp(-gamma |x|^2 - theta t)``, the pressure lower barrier."""
    return delta**gamma * np.exp(-gamma * np.asarray(r2) - theta * t)


# ---------------------------------------------------------------------------
# stepping


def _grad_sq(p, grid):
    g = grad_array(p, grid)
    return np.sum(g**2, axis=0)


def _pressure_solve(p_old, p_m, g_mix, gamma, eps, dt, grid, cfg):
    coef = gamma * (p_m + eps)
    diag = 1.0 / (dt * coef)
    rhs = diag * (p_old + dt * (_grad_sq(p_m, grid) + gamma * p_m * g_mix))
    return _solve_spd(grid, diag, rhs, p_m, cfg)


def _substep(state: SpeciesState, model: GrowthModel, nutrient, cfg: SolverConfig, dt):
    grid = state.grid
    gamma = state.law.gamma
    rho_i0, p0, n0 = state.rho_i, state.p, state.n
    rho_m, p_m, n_m = rho_i0, p0, n0
    iters = []
    converged = False
    diff = math.inf
    for m in range(1, cfg.max_iter + 1):
        g_mix = mix_growth(model.evaluate(p_m, n_m), rho_m)
        p_new = _pressure_solve(p0, p_m, g_mix, gamma, cfg.epsilon(m), dt, grid, cfg)
        vel = face_velocities(p_new, grid)
        g_i = model.evaluate(p_new, n_m)
        rho_new = np.stack([
            r - dt * upwind_divergence(r, vel, grid) + dt * r * g
            for r, g in zip(rho_i0, g_i)
        ])
        n_new = nutrient_step(n0, rho_new, nutrient, grid, dt) if nutrient is not None else n0
        diff = float(np.max(np.abs(p_new - p_m)))
        iters.append(diff)
        rho_m, p_m, n_m = rho_new, p_new, n_new
        if diff <= cfg.tol_fp and m > 1:
            converged = True
            break
    g_min = float(np.min(model.evaluate(p_m, n_m), initial=0.0))
    courant = float(np.max(outflow_fraction(vel, grid, dt))) + dt * max(-g_min, 0.0)
    return rho_m, n_m, iters, converged, diff, courant


def _initial_dt(state, model, nutrient, cfg, dt):
    grid = state.grid
    speed = max_speed(face_velocities(state.p, grid))
    dt = min(dt, cfg.cfl * grid.h / max(speed, 1e-12))
    if model.bound > 0:
        dt = min(dt, 0.5 / model.bound)
    if nutrient is not None and nutrient.enabled:
        c = float(np.max(nutrient.consumption(state.rho_i), initial=0.0))
        if c > 0:
            dt = min(dt, 0.5 / c)
    return dt


def step(state: SpeciesState, model: GrowthModel, cfg: SolverConfig, nutrient: NutrientModel | None = None,
         dt=None, info: StepInfo | None = None):
    """Advance ``state`` by ``dt`` (default ``cfg.dt``), sub-cycling as needed."""
    if state.law.incompressible:
        from .model import UnsupportedLawError
        raise UnsupportedLawError("use hele_shaw.step_incompressible for gamma = infinity")
    total = cfg.dt if dt is None else dt
    info = info if info is not None else StepInfo(state.t, total, 0)
    done = 0.0
    while done < total * (1 - 1e-12):
        remaining = total - done
        sub = _initial_dt(state, model, nutrient, cfg, remaining)
        for _ in range(cfg.max_halvings + 1):
            rho_i, n, iters, ok, res, courant = _substep(state, model, nutrient, cfg, sub)
            if courant <= 1.0:
                break
            sub *= 0.5
        else:
            raise SchemeFailure(f"could not satisfy the positivity bound at t={state.t}")
        if rho_i.min(initial=0.0) < -1e-10:
            raise SchemeFailure(f"negative density {rho_i.min():.3e} at t={state.t}")
        rho_i = np.maximum(rho_i, 0.0)
        p = pressure_from_density(rho_i.sum(axis=0), state.law)
        t_new = state.t + sub if remaining - sub > 1e-14 * total else info.t + total
        state = SpeciesState(state.grid, t_new, rho_i, p, n, state.law)
        info.substeps += 1
        info.iterations.append(len(iters))
        info.converged &= ok
        info.residual = max(info.residual, res if not ok else 0.0)
        done = total if remaining - sub <= 1e-14 * total else done + sub
    if not info.converged:
        log.warning("fixed-point loop hit max_iter at t=%.6g", state.t)
    return state


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    """Completed-run record: snapshots, the per-step pressure history and a step log."""

    grid: GridSpec
    law: PressureLaw
    snapshots: list = field(default_factory=list)
    times: list = field(default_factory=list)
    pressures: list = field(default_factory=list)
    densities: list = field(default_factory=list)
    growth: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def final(self) -> SpeciesState:
        return self.snapshots[-1]

    def snapshot_at(self, t) -> SpeciesState:
        for s in self.snapshots:
            if abs(s.t - t) <= 1e-9 * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot at t={t}")

    def history_times(self):
        return np.asarray(self.times)


def _record(traj: Trajectory, state: SpeciesState, model: GrowthModel | None):
    traj.times.append(state.t)
    traj.pressures.append(state.p)
    traj.densities.append(state.rho_i)
    if model is not None:
        traj.growth.append(model.evaluate(state.p, state.n))


def run(initial: SpeciesState, horizon, model: GrowthModel, cfg: SolverConfig, nutrient=None,
        snapshot_times=(), hooks=(), hook_every=1, stepper=None, history_stride=1):
    """Advance ``initial`` to ``initial.t + horizon``.

    Every accepted step is appended to the pressure/density history (used by
    the flow maps); full states are kept at ``snapshot_times`` and at the end.
    ``hooks`` are called as ``hook(state, step_index)`` every ``hook_every`` steps.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    stepper = stepper or (lambda s, dt, info: step(s, model, cfg, nutrient, dt=dt, info=info))
    traj = Trajectory(initial.grid, initial.law)
    state = initial
    t_end = initial.t + horizon
    stops = sorted({float(t) for t in snapshot_times if initial.t < t < t_end} | {t_end})
    traj.snapshots.append(state)
    _record(traj, state, model)
    k = 0
    for stop in stops:
        while stop - state.t > 1e-12 * max(1.0, abs(stop)):
            dt = min(cfg.dt, stop - state.t)
            if stop - (state.t + dt) < 1e-9 * cfg.dt:
                dt = stop - state.t
            info = StepInfo(state.t, dt, 0)
            state = stepper(state, dt, info)
            state = state.evolve(t=stop) if abs(state.t - stop) < 1e-12 * max(1.0, stop) else state
            k += 1
            traj.steps.append(info)
            if not info.converged:
                traj.flags.append(f"fixed point not converged at step {k} (t={state.t:.6g})")
            if k % history_stride == 0 or abs(state.t - stop) < 1e-14:
                _record(traj, state, model)
            if hooks and k % hook_every == 0:
                for hook in hooks:
                    hook(state, k)
        if horizon > 0:
            traj.snapshots.append(state)
    return traj


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(state: SpeciesState, directory, step_index, config=None):
    """Write every field as a snapshot file plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = state.field_names()
    for name in names:
        save_snapshot(state.field(name), directory / name)
    manifest = {"t": state.t, "step": step_index, "species": state.species,
                "gamma": state.law.to_config(), "fields": names,
                "config_hash": config_hash(config) if config is not None else None}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_checkpoint(directory) -> tuple[SpeciesState, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    rho_i = np.stack([load_snapshot(directory / f"rho_{i + 1}").values for i in range(manifest["species"])])
    p = load_snapshot(directory / "p")
    n = load_snapshot(directory / "n").values
    gamma = manifest["gamma"]
    law = PressureLaw(math.inf if gamma == "inf" else float(gamma))
    state = SpeciesState(p.grid, float(manifest["t"]), rho_i, p.values, n, law)
    return state, manifest
