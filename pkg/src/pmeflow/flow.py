"""Lagrangian flow maps along ``-grad p``.

Particles sit at cell centres of the support and carry a mass weight, the
per-species weights and running integrals of ``G_i`` along their path. The
velocity source holds ``-grad p`` (and friends) at the solver's step times;
in between it is linear in time and multilinear in space. Time stepping is
the explicit midpoint rule, forward for ``X`` and backward for ``Y``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels
from .fields import GridSpec, ScalarField, grad_array, integral, lap_array
from .model import mix_growth

SEED_THRESHOLD = 1e-10


class ParticleExitError(RuntimeError):
    """A particle left the computational box."""


def staggered_faces(pressures, grid: GridSpec):
    """Face velocities ``-dp/dx_c`` per axis, stacked over the pressure history.

    Truncated grids get the closed boundary faces appended (``n + 1`` faces at
    ``a + j h``); periodic grids keep their ``n`` faces at ``a + (j + 1) h``.
    """
    out = []
    for c in range(grid.dim):
        stack = []
        for p in pressures:
            if grid.periodic:
                f = -(np.roll(p, -1, c) - p) / grid.h
            else:
                pad = [(0, 0)] * grid.dim
                pad[c] = (1, 1)
                f = np.pad(-np.diff(p, axis=c) / grid.h, pad)
            stack.append(f)
        out.append(np.stack(stack))
    return out


class VelocitySource:
    """Time-indexed velocity ``V = -grad p`` plus the scalars carried along paths.

    ``velocities`` has shape (K, d, *grid.shape); ``growth`` (K, ell, *shape);
    ``pressures`` and ``ledger`` (K, *shape). ``ledger`` is the right-hand side of
    ``d/dt (p o X) = gamma p (lap p + G)``.

    With ``faces`` (one (K, *face_shape) array per axis, the transport
    scheme's face velocities) paths are driven by the staggered field, each
    component interpolated from its own faces; ``extra`` (cell-centred, added
    on top) carries probe perturbations. ``velocities`` always holds the
    cell-centred total, which is what comparisons of two sources use.
    """

    def __init__(self, grid: GridSpec, times, velocities, growth=None, pressures=None, ledger=None,
                 faces=None, extra=None):
        self.grid = grid
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or len(self.times) < 1:
            raise ValueError("need at least one time")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase")
        self.velocities = np.asarray(velocities, dtype=float)
        self.growth = None if growth is None else np.asarray(growth, dtype=float)
        self.pressures = None if pressures is None else np.asarray(pressures, dtype=float)
        self.ledger = None if ledger is None else np.asarray(ledger, dtype=float)
        self.faces = faces
        self.extra = None if extra is None else np.asarray(extra, dtype=float)
        if faces is None:
            self.speeds = np.array([float(np.max(np.sqrt(np.sum(v**2, axis=0)), initial=0.0))
                                    for v in self.velocities])
        else:
            spd = sum(np.max(np.abs(f.reshape(len(self.times), -1)), axis=1) for f in faces)
            if self.extra is not None:
                spd = spd + np.max(np.abs(self.extra.reshape(self.extra.shape[0], -1)), axis=1)
            self.speeds = np.asarray(spd, dtype=float)

    @classmethod
    def from_trajectory(cls, traj, with_ledger=True, staggered=True):
        grid = traj.grid
        vel = np.stack([-grad_array(p, grid) for p in traj.pressures])
        growth = np.stack(traj.growth) if traj.growth else None
        ledger = None
        if with_ledger and growth is not None and not traj.law.incompressible:
            ledger = np.stack([traj.law.gamma * p * (lap_array(p, grid) + mix_growth(g, r))
                               for p, g, r in zip(traj.pressures, traj.growth, traj.densities)])
        faces = staggered_faces(traj.pressures, grid) if staggered else None
        return cls(grid, traj.times, vel, growth, np.stack(traj.pressures), ledger, faces)

    @classmethod
    def constant(cls, grid: GridSpec, v0, times):
        v0 = np.asarray(v0, dtype=float).reshape((grid.dim,) + (1,) * grid.dim)
        vel = np.broadcast_to(v0, (grid.dim,) + grid.shape)
        return cls(grid, times, np.stack([vel] * len(times)))

    def perturbed(self, eps, w):
        """Same source with ``V + eps w``; ``w`` has shape (d, *shape) or (K, d, *shape)."""
        w = np.asarray(w, dtype=float)
        if w.ndim == self.grid.dim + 1:
            w = w[None]
        extra = None
        if self.faces is not None:
            extra = eps * w if self.extra is None else self.extra + eps * w
        return VelocitySource(self.grid, self.times, self.velocities + eps * w, self.growth,
                              self.pressures, self.ledger, self.faces, extra)

    @property
    def start(self):
        return float(self.times[0])

    @property
    def end(self):
        return float(self.times[-1])

    def _bracket(self, tau):
        if len(self.times) == 1:
            return 0, 0, 0.0
        if tau < self.times[0] - 1e-12 or tau > self.times[-1] + 1e-12:
            raise ValueError(f"time {tau} outside the velocity record [{self.start}, {self.end}]")
        k = int(np.searchsorted(self.times, tau, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 2)
        theta = (tau - self.times[k]) / (self.times[k + 1] - self.times[k])
        return k, k + 1, min(max(theta, 0.0), 1.0)

    def _sample(self, arr, tau, x):
        g = self.grid
        k0, k1, th = self._bracket(tau)
        a = kernels.interp_linear(np.ascontiguousarray(arr[k0]), g.lower, g.h, g.periodic, x)
        if th == 0.0 or k0 == k1:
            return a
        b = kernels.interp_linear(np.ascontiguousarray(arr[k1]), g.lower, g.h, g.periodic, x)
        return a * (1.0 - th) + b * th

    def _sample_faces(self, c, tau, x):
        g = self.grid
        lower = list(g.lower)
        lower[c] += 0.5 * g.h if g.periodic else -0.5 * g.h
        k0, k1, th = self._bracket(tau)
        arr = self.faces[c]
        a = kernels.interp_linear(np.ascontiguousarray(arr[k0]), tuple(lower), g.h, g.periodic, x)
        if th == 0.0 or k0 == k1:
            return a
        b = kernels.interp_linear(np.ascontiguousarray(arr[k1]), tuple(lower), g.h, g.periodic, x)
        return a * (1.0 - th) + b * th

    def velocity(self, tau, x):
        if self.faces is None:
            return np.stack([self._sample(self.velocities[:, c], tau, x) for c in range(self.grid.dim)], axis=1)
        v = np.stack([self._sample_faces(c, tau, x) for c in range(self.grid.dim)], axis=1)
        if self.extra is not None:
            if self.extra.shape[0] == 1:
                v += np.stack([kernels.interp_linear(np.ascontiguousarray(self.extra[0, c]), self.grid.lower,
                                                     self.grid.h, self.grid.periodic, x)
                               for c in range(self.grid.dim)], axis=1)
            else:
                v += np.stack([self._sample(self.extra[:, c], tau, x) for c in range(self.grid.dim)], axis=1)
        return v

    def growth_at(self, tau, x):
        return np.stack([self._sample(self.growth[:, i], tau, x) for i in range(self.growth.shape[1])])

    def pressure_at(self, tau, x):
        return self._sample(self.pressures, tau, x)

    def ledger_at(self, tau, x):
        return self._sample(self.ledger, tau, x)

    def breakpoints(self, a, b):
        lo, hi = min(a, b), max(a, b)
        inner = [float(t) for t in self.times if lo + 1e-12 < t < hi - 1e-12]
        pts = [lo] + inner + [hi]
        return pts if b >= a else pts[::-1]

    def max_speed(self, a, b):
        lo, hi = min(a, b), max(a, b)
        k0 = max(int(np.searchsorted(self.times, lo, side="right")) - 1, 0)
        k1 = min(int(np.searchsorted(self.times, hi, side="left")), len(self.times) - 1)
        return float(self.speeds[k0:k1 + 1].max())


@dataclass
class ParticleEnsemble:
    """Particles started at base time ``s``; ``time`` is where they are now."""

    grid: GridSpec
    s: float
    time: float
    x: np.ndarray            # (M, d) current positions
    x0: np.ndarray           # (M, d) positions at time s
    weights: np.ndarray      # (M,) mass units
    species_weights: np.ndarray  # (ell, M)
    growth_integrals: np.ndarray  # (ell, M) int G_i o X dtau
    ledger_integral: np.ndarray   # (M,) int gamma p (lap p + G) o X dtau
    ids: np.ndarray

    @classmethod
    def seed(cls, state, threshold=SEED_THRESHOLD, per_cell=1):
        """Particles where ``rho > threshold * max rho``: ``per_cell**d`` per cell on a
        regular sub-lattice (midpoint rule), one at the cell centre by default."""
        grid = state.grid
        rho = state.rho
        mask = rho > threshold * float(rho.max(initial=0.0))
        centres = grid.points()[mask.ravel()]
        ids = np.flatnonzero(mask.ravel())
        frac = 1.0 / per_cell**grid.dim
        w = rho[mask] * grid.cell_volume * frac
        wi = np.stack([r[mask] * grid.cell_volume * frac for r in state.rho_i])
        if per_cell > 1:
            off = ((np.arange(per_cell) + 0.5) / per_cell - 0.5) * grid.h
            offsets = np.stack(np.meshgrid(*([off] * grid.dim), indexing="ij"), axis=-1).reshape(-1, grid.dim)
            k = len(offsets)
            centres = (centres[:, None, :] + offsets[None]).reshape(-1, grid.dim)
            w = np.repeat(w, k)
            wi = np.repeat(wi, k, axis=1)
            ids = np.repeat(ids, k) * k + np.tile(np.arange(k), len(ids))
        return cls(grid, state.t, state.t, centres.copy(), centres.copy(), w, wi, np.zeros_like(wi),
                   np.zeros(len(w)), ids)

    @classmethod
    def at(cls, grid, points, t, weights=None, species_weights=None, ids=None):
        pts = np.asarray(points, dtype=float).reshape(-1, grid.dim)
        m = len(pts)
        w = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
        wi = w[None] if species_weights is None else np.asarray(species_weights, dtype=float)
        return cls(grid, t, t, pts.copy(), pts.copy(), w, wi, np.zeros_like(wi), np.zeros(m),
                   np.arange(m) if ids is None else np.asarray(ids))

    @property
    def size(self):
        return len(self.weights)

    @property
    def mass(self):
        return math.fsum(self.weights)

    def copy(self, **changes):
        arrays = {k: getattr(self, k).copy() for k in
                  ("x", "x0", "weights", "species_weights", "growth_integrals", "ledger_integral", "ids")}
        arrays.update(changes)
        return replace(self, **arrays)


@dataclass
class FlowMapRecord:
    """Ensemble snapshots of one map; ``direction`` is ``"forward"`` (X) or ``"backward"`` (Y)."""

    direction: str
    s: float
    duration: float
    snapshots: list = field(default_factory=list)

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be forward or backward")

    @property
    def final(self) -> ParticleEnsemble:
        return self.snapshots[-1]

    def times(self):
        return [e.time for e in self.snapshots]


def _check_inside(ens, x):
    g = ens.grid
    if g.periodic:
        return np.mod(x - np.asarray(g.lower), np.asarray(g.upper) - np.asarray(g.lower)) + np.asarray(g.lower)
    lo = np.asarray(g.lower)
    hi = np.asarray(g.upper)
    if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
        raise ParticleExitError("particle left the computational box; enlarge the domain")
    return x


def _advance(ens: ParticleEnsemble, source: VelocitySource, duration, sign, cfl, sample_times=()):
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    ens = ens.copy()
    record = FlowMapRecord("forward" if sign > 0 else "backward", ens.time, duration, [ens.copy()])
    if duration == 0:
        return record
    target = ens.time + sign * duration
    marks = sorted(set(float(t) for t in sample_times))
    h = ens.grid.h
    have_growth = source.growth is not None
    have_ledger = source.ledger is not None
    pts = source.breakpoints(ens.time, target)
    for a, b in zip(pts[:-1], pts[1:]):
        span = abs(b - a)
        vmax = source.max_speed(a, b)
        nsub = max(1, math.ceil(span * vmax / (cfl * h) - 1e-12))
        dt = span / nsub
        for k in range(nsub):
            tau = a + sign * k * dt
            mid = tau + sign * 0.5 * dt
            v1 = source.velocity(tau, ens.x)
            xm = ens.x + sign * 0.5 * dt * v1
            v2 = source.velocity(mid, xm)
            ens.x = _check_inside(ens, ens.x + sign * dt * v2)
            # growth integrals accumulate in forward time: backward maps report int_{s-t}^{s}
            if have_growth:
                ens.growth_integrals += dt * source.growth_at(mid, xm)
            if have_ledger:
                ens.ledger_integral += dt * source.ledger_at(mid, xm)
            ens.time = b if k == nsub - 1 else tau + sign * dt
        if any(abs(b - m) < 1e-12 for m in marks):
            record.snapshots.append(ens.copy())
    ens.time = target
    if record.snapshots[-1].time != target:
        record.snapshots.append(ens.copy())
    return record


def advance_forward(ens, source, duration, cfl=0.5, sample_times=()):
    """Forward map ``X(duration, s, .)``; returns the :class:`FlowMapRecord`."""
    return _advance(ens, source, duration, +1, cfl, sample_times)


def advance_backward(ens, source, duration, cfl=0.5, sample_times=()):
    """Backward map ``Y(duration, s, .)``: positions at ``s - duration`` of particles at ``s``."""
    return _advance(ens, source, duration, -1, cfl, sample_times)


# ---------------------------------------------------------------------------
# checks


@dataclass
class ResidualReport:
    kind: str
    residual: float       # int rho_bar |composed - direct|
    relative: float       # residual / mass
    h: float
    dt: float
    mass: float


def map_field(source, grid: GridSpec, s, duration, cfl=0.5, direction="forward"):
    """The map sampled at every cell centre: shape (*grid.shape, d)."""
    ens = ParticleEnsemble.at(grid, grid.points(), s)
    adv = advance_forward if direction == "forward" else advance_backward
    return adv(ens, source, duration, cfl).final.x.reshape(grid.shape + (grid.dim,))


def compose(map_values, grid: GridSpec, points):
    """Evaluate a sampled map at arbitrary points by multilinear interpolation."""
    pts = np.asarray(points, dtype=float)
    return np.stack([kernels.interp_linear(np.ascontiguousarray(map_values[..., c]), grid.lower, grid.h,
                                           grid.periodic, pts) for c in range(grid.dim)], axis=1)


def _weighted_l1(w, a, b):
    return math.fsum(w * np.sqrt(np.sum((a - b) ** 2, axis=1)))


def check_inversion(source, state_end, s, duration, cfl=0.5, solver_dt=None):
    """``int rho(s+t) |X(t, s, Y(t, s+t, x)) - x|`` with ``X`` sampled on the grid.

    Particles seeded from ``state_end`` (at ``s + duration``) are integrated
    backward; the forward map, computed independently at every cell centre,
    is then interpolated at the backward end points.
    """
    grid = state_end.grid
    ens = ParticleEnsemble.seed(state_end)
    y = advance_backward(ens, source, duration, cfl).final.x
    xmap = map_field(source, grid, s, duration, cfl, "forward")
    xy = compose(xmap, grid, y)
    res = _weighted_l1(ens.weights, xy, ens.x0)
    return ResidualReport("inversion", res, res / ens.mass, grid.h, solver_dt or float("nan"), ens.mass)


def check_semigroup(source, state_start, s, duration, t_mid, cfl=0.5, solver_dt=None):
    """``int rho(s) |X(t-t', s+t', X(t', s, x)) - X(t, s, x)|`` with the outer map sampled on the grid."""
    if not 0 < t_mid < duration:
        raise ValueError("intermediate time must lie strictly inside (0, duration)")
    grid = state_start.grid
    ens = ParticleEnsemble.seed(state_start)
    direct = advance_forward(ens, source, duration, cfl).final.x
    first = advance_forward(ens, source, t_mid, cfl).final.x
    outer = map_field(source, grid, s + t_mid, duration - t_mid, cfl, "forward")
    composed = compose(outer, grid, first)
    res = _weighted_l1(ens.weights, composed, direct)
    return ResidualReport("semigroup", res, res / ens.mass, grid.h, solver_dt or float("nan"), ens.mass)


# ---------------------------------------------------------------------------
# deposition and reconstruction


def deposit(ens: ParticleEnsemble, weights=None, name="rho_push") -> ScalarField:
    """Cloud-in-cell density of the ensemble; the deposited mass equals ``sum w`` exactly."""
    g = ens.grid
    w = ens.weights if weights is None else np.asarray(weights, dtype=float)
    mass = kernels.cic_deposit(g.shape, g.lower, g.h, g.periodic, np.ascontiguousarray(ens.x),
                               np.ascontiguousarray(w))
    return ScalarField(g, np.maximum(mass / g.cell_volume, 0.0), ens.time, name, density=True)


def reconstruct_species(ens: ParticleEnsemble, i, phi=None):
    """``sum_j w_ij phi(X_j) exp(int G_i o X)``; without ``phi`` the deposited field."""
    w = ens.species_weights[i] * np.exp(ens.growth_integrals[i])
    if phi is None:
        return deposit(ens, w, name=f"rho_{i + 1}_rec")
    return math.fsum(w * np.asarray(phi(ens.x), dtype=float))


def block_average(values, grid: GridSpec, block=4):
    """Averages over disjoint ``block^d`` cell blocks (trailing partial blocks dropped)."""
    v = np.asarray(values)
    for axis in range(grid.dim):
        n = (v.shape[axis] // block) * block
        v = np.take(v, np.arange(n), axis=axis)
        shp = list(v.shape)
        shp[axis:axis + 1] = [n // block, block]
        v = v.reshape(shp).mean(axis=axis + 1)
    return v


def block_l1(a, b, grid: GridSpec, block=4):
    """L1 distance between block averages (weak comparison against block indicators)."""
    da = block_average(a, grid, block) - block_average(b, grid, block)
    return math.fsum(np.abs(da).ravel()) * grid.cell_volume * block**grid.dim


def sandwich(pushed, rho_end, bound, duration, grid: GridSpec, block=4):
    """Relative violation of ``e^{-tB} rho <= X#rho <= e^{tB} rho`` in the block-averaged sense."""
    a = block_average(pushed, grid, block)
    r = block_average(rho_end, grid, block)
    lo = math.exp(-duration * bound) * r
    hi = math.exp(duration * bound) * r
    excess = np.maximum(a - hi, 0.0) + np.maximum(lo - a, 0.0)
    return math.fsum(excess.ravel()) / max(math.fsum(r.ravel()), 1e-300)


def pressure_ledger(ens: ParticleEnsemble, source: VelocitySource):
    """Weighted L1 gap between the change of ``p`` along paths and its integrated rate."""
    p0 = source.pressure_at(ens.s, ens.x0) if ens.s <= ens.time else source.pressure_at(ens.time, ens.x)
    p1 = source.pressure_at(ens.time, ens.x) if ens.s <= ens.time else source.pressure_at(ens.s, ens.x0)
    gap = np.abs(p1 - p0 - ens.ledger_integral)
    return math.fsum(ens.weights * gap) / max(ens.mass, 1e-300)


def mixing_metric(state):
    """``M_ij = int min(rho_i, rho_j)``; the diagonal is zero."""
    ell = state.species
    out = np.zeros((ell, ell))
    for i in range(ell):
        for j in range(i + 1, ell):
            out[i, j] = out[j, i] = integral(np.minimum(state.rho_i[i], state.rho_i[j]), state.grid)
    return out


def export_trajectories(record: FlowMapRecord, path):
    """One CSV row per particle and sample time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        first = record.snapshots[0]
        d = first.grid.dim
        ell = first.species_weights.shape[0]
        w.writerow(["time", "id"] + [f"x{k}" for k in range(d)] + ["weight"]
                   + [f"growth_{i + 1}" for i in range(ell)])
        for ens in record.snapshots:
            for j in range(ens.size):
                w.writerow([repr(ens.time), int(ens.ids[j])] + [repr(float(c)) for c in ens.x[j]]
                           + [repr(float(ens.weights[j]))] + [repr(float(g)) for g in ens.growth_integrals[:, j]])
    return path
