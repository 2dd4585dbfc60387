"""Functionals evaluated on runs: weights, AB and weighted-L1 quantities,
Hessian and entropy integrals, flow-stability functionals and the maximal
function inequality.

Time integrals use the trapezoid rule on the recorded step times, so every
cumulative series is nondecreasing when its integrand is nonnegative.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import GridSpec, ScalarField, grad_array, hessian_array, integral, lap_array, maximal_functions
from .flow import ParticleEnsemble, VelocitySource, advance_backward, advance_forward
from .model import mix_growth

P_FLOOR = 1e-30
DELTA_GUARD = 1e-30
XI_CAP = math.exp(-6.0)
XI_KNEE = XI_CAP / 2


class WeightError(ValueError):
    def __init__(self, message, witness):
        super().__init__(f"{message} (witness a={witness:.6g})")
        self.witness = witness


# ---------------------------------------------------------------------------
# weights


def xi(a):
    """Identity on ``[0, e^-6/2]``, then a C1 concave quadratic ramp that reaches ``e^-6`` with zero slope."""
    a = np.asarray(a, dtype=float)
    ramp = XI_CAP - XI_KNEE  # width over which the slope drops from 1 to 0 is 2 * ramp
    s = np.clip(a - XI_KNEE, 0.0, 2 * ramp)
    return np.where(a <= XI_KNEE, a, XI_KNEE + s - s * s / (4 * ramp))


def xi_prime(a):
    a = np.asarray(a, dtype=float)
    ramp = XI_CAP - XI_KNEE
    s = np.clip(a - XI_KNEE, 0.0, 2 * ramp)
    return np.where(a <= XI_KNEE, 1.0, 1.0 - s / (2 * ramp))


@dataclass(frozen=True)
class WeightSpec:
    lam: float
    gamma: float
    regime: str
    p_h: float = 1.0
    concave: bool = True
    w3_constant: float = 1.0

    def z(self, a):
        a = np.asarray(a, dtype=float)
        x = xi(np.maximum(a, 0.0))
        with np.errstate(divide="ignore"):
            out = np.where(x > 0, (-np.log(np.where(x > 0, x, 1.0))) ** (self.lam - 2), 0.0)
        return out

    def omega(self, p):
        p = np.maximum(np.asarray(p, dtype=float), 0.0)
        if self.regime == "basic":
            return p ** (1.0 / self.gamma) / self.gamma
        base = 1.0 if math.isinf(self.gamma) else 1.0 / self.gamma
        return np.where(p > 0, p**base, 0.0) * self.z(p)

    def zeta(self, a):
        """The increasing majorant partner in the W3 witness."""
        if self.regime == "basic":
            return np.zeros_like(np.asarray(a, dtype=float))
        x = xi(np.asarray(a, dtype=float))
        return np.log(1.0 / x) ** (self.lam - 1) / (1 - self.lam)


def build_weight(lam=0.5, gamma=2.0, regime="z", p_h=1.0, samples=1000, floor=1e-12):
    """Construct and validate a weight; ``gamma = inf`` forces the z regime."""
    if not 0 < lam < 1 and not (lam == 1 and regime == "basic"):
        raise ValueError("lambda' must lie in (0, 1)")
    if math.isinf(gamma):
        regime = "z"
    if regime not in ("basic", "z"):
        raise ValueError("regime must be 'basic' or 'z'")
    spec = WeightSpec(lam, gamma, regime, p_h)
    a = np.geomspace(floor, p_h, samples)
    w = spec.omega(a)
    if np.any(w < 0):
        raise WeightError("weight is negative", float(a[np.argmin(w)]))
    bad = np.flatnonzero(np.diff(w) < -1e-14 * np.abs(w[1:]))
    if bad.size:
        raise WeightError("weight is not nondecreasing (W1)", float(a[bad[0]]))
    g = 1.0 if math.isinf(gamma) else gamma
    # W2 by centred differences in log a: a w' = dw/dlog a
    la = np.log(a)
    dw = np.gradient(w, la)
    lhs = w[1:-1]
    rhs = g * dw[1:-1]
    bad = np.flatnonzero(lhs > rhs * 1.01 + 1e-300)
    if bad.size:
        raise WeightError("W2 fails: omega > gamma a omega'", float(a[1:-1][bad[0]]))
    # concavity on a linear grid, reported but not enforced (it needs gamma large enough)
    al = np.linspace(0.0, p_h, samples)
    wl = spec.omega(al)
    concave = bool(np.all(np.diff(wl, 2) <= 1e-12 * max(float(wl.max()), 1.0)))
    # W3: omega <= C a^(1/gamma) max(1/gamma, a zeta'(a))
    zp = np.gradient(spec.zeta(a), a) if regime == "z" else np.zeros_like(a)
    base = a ** (0.0 if math.isinf(gamma) else 1.0 / gamma)
    maj = base * np.maximum(1.0 / g, a * zp)
    c3 = float(np.max(w / maj))
    return WeightSpec(lam, gamma, regime, p_h, concave, c3)


# ---------------------------------------------------------------------------
# per-snapshot quantities


def _growth_mix(traj, k):
    if not traj.growth:
        return np.zeros(traj.grid.shape)
    return mix_growth(traj.growth[k], traj.densities[k])


def u_array(p, g_mix, gamma, grid):
    return -gamma * (lap_array(p, grid) + g_mix)


def _cumulative(times, values):
    """Running trapezoid integral of a sampled series."""
    out = [0.0]
    for k in range(1, len(values)):
        out.append(out[-1] + 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]))
    return np.asarray(out)


def ab_functional(traj, weight: WeightSpec):
    """Cumulative ``int_{Q_t} omega(p) u_+^2`` on the recorded times."""
    grid = traj.grid
    gamma = traj.law.gamma
    rates = []
    for k, p in enumerate(traj.pressures):
        u = u_array(p, _growth_mix(traj, k), gamma, grid)
        rates.append(integral(weight.omega(p) * np.maximum(u, 0.0) ** 2, grid))
    return _cumulative(traj.times, rates)


def log_pressure(p, p_floor=P_FLOOR):
    return np.log1p(1.0 / np.maximum(p, p_floor))


def weighted_l1_u(traj, lam=0.5, p_floor=P_FLOOR):
    """``(int_{Q_t} rho log(1+1/p)^(lam-1) |u|,  int rho log(1+1/p)^lam at t)``."""
    grid = traj.grid
    gamma = traj.law.gamma
    rates, masses = [], []
    for k, p in enumerate(traj.pressures):
        rho = traj.densities[k].sum(axis=0)
        u = u_array(p, _growth_mix(traj, k), gamma, grid)
        lp = log_pressure(p, p_floor)
        rates.append(integral(rho * lp ** (lam - 1) * np.abs(u), grid))
        masses.append(integral(rho * lp**lam, grid))
    return _cumulative(traj.times, rates), np.asarray(masses)


def degenerate_mass(rho, p, grid, threshold=1e-10):
    """Mass sitting where ``rho`` is positive but ``p < 1e-12``."""
    mask = (rho > threshold) & (p < 1e-12)
    return integral(np.where(mask, rho, 0.0), grid)


def hessian_density(p, grid):
    """``p |D^2 p|_F^2`` pointwise."""
    hess = hessian_array(p, grid)
    return p * np.sum(hess**2, axis=(0, 1))


def hessian_functional(traj):
    """(cumulative ``int_{Q_t} p |D^2 p|^2``, instantaneous ``int |grad p|^2``)."""
    grid = traj.grid
    rates = [integral(hessian_density(p, grid), grid) for p in traj.pressures]
    grads = [integral(np.sum(grad_array(p, grid) ** 2, axis=0), grid) for p in traj.pressures]
    return _cumulative(traj.times, rates), np.asarray(grads)


def entropy_and_moments(state, p_floor=P_FLOOR):
    grid = state.grid
    rho = state.rho
    r2 = grid.radius2()
    safe = np.where(rho > 0, rho, 1.0)
    ent = integral(np.where(rho > 0, rho * np.log(safe), 0.0), grid)
    out = {
        "mass": integral(rho, grid),
        "second_moment": integral(r2 * rho, grid),
        "entropy": ent,
    }
    # negative part of rho log rho is controlled by rho (1 + |x|^2) + (1 + |x|^2)^-d
    out["entropy_floor"] = -integral(rho * (1 + r2) + (1 + r2) ** (-grid.dim), grid)
    if not state.law.incompressible:
        gp = np.sum(grad_array(state.p, grid) ** 2, axis=0)
        out["dissipation"] = integral(rho * gp / (state.law.gamma * np.maximum(state.p, p_floor)), grid)
    return out


def moment_bound(traj, bound):
    """``(lhs, rhs)`` of the second-moment growth inequality at the final time."""
    grid = traj.grid
    r2 = grid.radius2()
    t0 = traj.times[0]
    rho0 = traj.densities[0].sum(axis=0)
    rates = [integral(d.sum(axis=0) * np.sum(grad_array(p, grid) ** 2, axis=0), grid)
             for d, p in zip(traj.densities, traj.pressures)]
    flux = _cumulative(traj.times, rates)[-1]
    T = traj.times[-1] - t0
    lhs = integral(r2 * traj.densities[-1].sum(axis=0), grid)
    rhs = math.exp(T * (bound + 1)) * (integral(r2 * rho0, grid) + flux)
    return lhs, rhs


def mass_ledger(traj):
    """``int rho(T) - int rho0 - int_{Q_T} rho G``."""
    grid = traj.grid
    masses = [integral(d.sum(axis=0), grid) for d in traj.densities]
    if traj.growth:
        src = [integral(np.sum(d * g, axis=0), grid) for d, g in zip(traj.densities, traj.growth)]
    else:
        src = [0.0] * len(masses)
    return masses[-1] - masses[0] - _cumulative(traj.times, src)[-1], masses


def nutrient_constants(traj, nutrient_history):
    """Measured constants in the heat-type nutrient bounds (ratio of each side)."""
    grid = traj.grid
    n0 = nutrient_history[0]
    nT = nutrient_history[-1]
    T = traj.times[-1] - traj.times[0]

    def w1inf(n):
        return float(np.max(np.abs(n))) + float(np.max(np.sqrt(np.sum(grad_array(n, grid) ** 2, axis=0))))

    rho_inf = max(float(d.sum(axis=0).max()) for d in traj.densities)
    n_inf = max(float(np.max(np.abs(n))) for n in nutrient_history)
    c1 = w1inf(nT) / (w1inf(n0) + rho_inf * n_inf * math.sqrt(T))
    times = np.asarray(traj.times)
    dtn = [np.zeros(grid.shape)] + [(b - a) / (t1 - t0) for a, b, t0, t1 in
                                    zip(nutrient_history[:-1], nutrient_history[1:], times[:-1], times[1:])]
    dt_l2 = _cumulative(times, [integral(d**2, grid) for d in dtn])[-1]
    rho_l2 = _cumulative(times, [integral(d.sum(axis=0) ** 2, grid) for d in traj.densities])[-1]
    g0 = integral(np.sum(grad_array(n0, grid) ** 2, axis=0), grid)
    gT = integral(np.sum(grad_array(nT, grid) ** 2, axis=0), grid)
    c2 = (gT + dt_l2) / max(g0 + n_inf**2 * rho_l2, 1e-300)
    return {"w1inf": c1, "energy": c2}


# ---------------------------------------------------------------------------
# maximal functions


def maximal_inequality(p: ScalarField, pairs=1000, seed=0, r_max=None, interior=0.25):
    """Worst ratio of ``p(x1)|grad p(x1) - grad p(x2)|`` to
    ``|x1 - x2| (f1 + f2 + g1^2 + g2^2)`` over random interior cell pairs."""
    grid = p.grid
    f, g = maximal_functions(p, r_max)
    grad = grad_array(p.values, grid)
    rng = np.random.default_rng(seed)
    lo = [int(interior * n) for n in grid.cells]
    hi = [int((1 - interior) * n) for n in grid.cells]
    i1 = np.stack([rng.integers(a, b, pairs) for a, b in zip(lo, hi)])
    i2 = np.stack([rng.integers(a, b, pairs) for a, b in zip(lo, hi)])
    same = np.all(i1 == i2, axis=0)
    i2[0, same] = np.where(i2[0, same] + 1 < hi[0], i2[0, same] + 1, i2[0, same] - 1)
    t1, t2 = tuple(i1), tuple(i2)
    dist = np.sqrt(np.sum(((i1 - i2) * grid.h) ** 2, axis=0))
    gdiff = np.sqrt(np.sum((grad[(slice(None),) + t1] - grad[(slice(None),) + t2]) ** 2, axis=0))
    lhs = p.values[t1] * gdiff
    rhs = dist * (f.values[t1] + f.values[t2] + g.values[t1] ** 2 + g.values[t2] ** 2)
    ratio = np.where(rhs > 0, lhs / np.where(rhs > 0, rhs, 1.0), np.where(lhs > 0, np.inf, 0.0))
    return float(ratio.max())


# ---------------------------------------------------------------------------
# stability


@dataclass
class StabilityProbe:
    """Comparison velocity ``V`` with density ``mu`` (history aligned with ``V.times``)."""

    velocity: VelocitySource
    mu: np.ndarray  # (K, *shape)
    label: str = ""

    @classmethod
    def perturbation(cls, traj, eps, w, source=None):
        source = source or VelocitySource.from_trajectory(traj)
        mu = np.stack([d.sum(axis=0) for d in traj.densities])
        return cls(source.perturbed(eps, w), mu, f"eps={eps:g}")

    def delta(self, base: VelocitySource, t_end=None):
        """``(int_{Q_T} mu |grad p + V|^2)^(1/2)`` on the recorded times up to ``t_end``."""
        if len(base.times) != len(self.velocity.times) or np.any(base.times != self.velocity.times):
            raise ValueError("probe and trajectory horizons differ")
        grid = base.grid
        diff = self.velocity.velocities - base.velocities  # V - (-grad p)
        rates = [integral(m * np.sum(d**2, axis=0), grid) for m, d in zip(self.mu, diff)]
        times = base.times
        if t_end is not None:
            keep = times <= t_end + 1e-12
            times = times[keep]
            rates = [r for r, k in zip(rates, keep) if k]
        return math.sqrt(max(_cumulative(times, rates)[-1], 0.0))


def _rho_bar(traj, probe, s):
    k = int(np.argmin(np.abs(np.asarray(traj.times) - s)))
    if abs(traj.times[k] - s) > 1e-9:
        raise ValueError(f"no recorded time at s={s}")
    return np.minimum(traj.densities[k].sum(axis=0), probe.mu[k])


def _seed(grid, rho_bar):
    mask = rho_bar > 0
    pts = grid.points()[mask.ravel()]
    return ParticleEnsemble.at(grid, pts, 0.0, weights=rho_bar[mask] * grid.cell_volume)


@dataclass
class StabilityResult:
    s: float
    t: float
    I: float
    J: float
    dist_forward: float
    dist_backward: float


def stability_functionals(probe: StabilityProbe, traj, pairs, cfl=0.5, base=None):
    """``I_T(t, s)``, ``J_T(t, s)`` and the flow distances for each ``(s, t)`` in ``pairs``.

    ``delta`` is taken over the whole record for both functionals.
    """
    base = base or VelocitySource.from_trajectory(traj)
    delta = max(probe.delta(base), DELTA_GUARD)
    grid = traj.grid
    out = []
    for s, t in pairs:
        rb = _rho_bar(traj, probe, s)
        ens = _seed(grid, rb)
        ens.s = ens.time = s
        fwd = np.inf if s + t > base.end + 1e-12 else 0
        I = df = math.nan
        if not fwd:
            X = advance_forward(ens, base, t, cfl).final.x
            S = advance_forward(ens, probe.velocity, t, cfl).final.x
            sep = np.sqrt(np.sum((X - S) ** 2, axis=1))
            pX = np.maximum(base.pressure_at(s + t, X), 0.0)
            I = math.fsum(ens.weights * np.log1p(pX * np.log1p(np.minimum(sep, 1.0) / delta)))
            df = math.fsum(ens.weights * sep)
        J = db = math.nan
        if s - t >= base.start - 1e-12:
            Y = advance_backward(ens, base, t, cfl).final.x
            Z = advance_backward(ens, probe.velocity, t, cfl).final.x
            sep = np.sqrt(np.sum((Y - Z) ** 2, axis=1))
            pY = np.maximum(base.pressure_at(s - t, Y), 0.0)
            J = math.fsum(ens.weights * np.log1p(pY * np.log1p(np.minimum(sep, 1.0) / delta)))
            db = math.fsum(ens.weights * sep)
        out.append(StabilityResult(s, t, I, J, df, db))
    return out, delta


def loglog(delta):
    return math.log1p(math.log1p(1.0 / max(delta, DELTA_GUARD)))


def flow_distance(probe, traj, pairs, lam=0.5, cfl=0.5, base=None):
    """Sup of forward/backward distances with the log-log scaled ratio."""
    results, delta = stability_functionals(probe, traj, pairs, cfl, base)
    fwd = max((r.dist_forward for r in results if not math.isnan(r.dist_forward)), default=0.0)
    bwd = max((r.dist_backward for r in results if not math.isnan(r.dist_backward)), default=0.0)
    scale = loglog(delta) ** (-lam / 2)
    return {"forward": fwd, "backward": bwd, "delta": delta,
            "ratio_forward": fwd / scale, "ratio_backward": bwd / scale, "results": results}


def i_bound_ratio(results, delta, bound, horizon, lam=0.5):
    """``sup I / (e^{BT} loglog(delta)^(1 - lam))``."""
    sup_i = max((r.I for r in results if not math.isnan(r.I)), default=0.0)
    return sup_i / (math.exp(bound * horizon) * loglog(delta) ** (1 - lam))


# ---------------------------------------------------------------------------
# report


@dataclass
class DiagnosticsReport:
    h: float
    dt: float
    rows: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def add(self, name, t, value):
        value = float(value)
        if not math.isfinite(value):
            self.flags.append(f"{name} non-finite at t={t!r}")
        self.rows.append((name, float(t), value))

    def add_series(self, name, times, values):
        for t, v in zip(times, values):
            self.add(name, t, v)

    def series(self, name):
        return [(t, v) for n, t, v in self.rows if n == name]

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "diagnostics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["functional", "t", "value", "h", "dt"])
            for name, t, v in self.rows:
                w.writerow([name, repr(t), repr(v), repr(self.h), repr(self.dt)])
        manifest = {"constants": self.constants, "flags": self.flags, "h": self.h, "dt": self.dt}
        (directory / "diagnostics.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True, default=_json_default))
        return directory


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def read_report(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "diagnostics.json").read_text())
    rep = DiagnosticsReport(manifest["h"], manifest["dt"], constants=manifest["constants"],
                            flags=manifest["flags"])
    with open(directory / "diagnostics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            rep.rows.append((row["functional"], float(row["t"]), float(row["value"])))
    return rep
