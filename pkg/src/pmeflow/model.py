"""Constitutive law, growth models and the species state."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .expr import compile_expression
from .fields import GridSpec, ScalarField, lap_array

INFINITE = math.inf

FRACTION_THRESHOLD = 1e-10


class UnsupportedLawError(ValueError):
    """Raised when a finite-gamma operation is asked to handle gamma = infinity."""


class ModelInvalidError(ValueError):
    """Growth functions returned non-finite values."""


@dataclass(frozen=True)
class PressureLaw:
    """``p = rho**gamma``; ``gamma = INFINITE`` means ``p (1 - rho) = 0, rho <= 1``."""

    gamma: float

    def __post_init__(self):
        if not self.gamma >= 1:
            raise ValueError("gamma >= 1 required")

    @property
    def incompressible(self) -> bool:
        return math.isinf(self.gamma)

    def energy(self, rho):
        if self.incompressible:
            return np.where(np.asarray(rho) <= 1.0, 0.0, np.inf)
        return np.asarray(rho) ** (self.gamma + 1) / (self.gamma + 1)

    def to_config(self):
        return "inf" if self.incompressible else self.gamma


def pressure_from_density(rho, law: PressureLaw):
    """Pointwise ``rho**gamma``; arrays in, arrays out, fields in, fields out."""
    if law.incompressible:
        raise UnsupportedLawError(
            "gamma = infinity has no pointwise pressure law; use hele_shaw.solve_complementarity")
    if isinstance(rho, ScalarField):
        return ScalarField(rho.grid, np.maximum(rho.values, 0.0) ** law.gamma, rho.t, "p")
    return np.maximum(np.asarray(rho, dtype=np.float64), 0.0) ** law.gamma


# ---------------------------------------------------------------------------
# growth


def growth_preset(name, **params):
    """Build ``G(p, n)`` for one of the named presets."""
    g0 = params.get("g0", 1.0)
    p_h = params.get("p_h", 1.0)
    if name == "linear-homeostatic":
        return compile_expression("g0 * (1 - p / p_h)", {"g0": g0, "p_h": p_h})
    if name == "nutrient-gated":
        delta = params.get("delta", 1.0)
        return compile_expression("g0 * n / (1 + n) - delta * p / p_h",
                                  {"g0": g0, "delta": delta, "p_h": p_h})
    if name == "constant":
        return compile_expression("c", {"c": params.get("value", g0)})
    raise KeyError(f"unknown growth preset {name!r}")


def _fd(fn, h=1e-6):
    def dp(p, n):
        p = np.asarray(p, float)
        step = h * np.maximum(1.0, np.abs(p))
        lo = np.maximum(p - step, 0.0)
        return (fn(p + step, n) - fn(lo, n)) / (p + step - lo)

    def dn(p, n):
        n = np.asarray(n, float)
        step = h * np.maximum(1.0, np.abs(n))
        lo = np.maximum(n - step, 0.0)
        return (fn(p, n + step) - fn(p, lo)) / (n + step - lo)

    return dp, dn


@dataclass
class GrowthModel:
    """Growth rates ``G_i(p, n)`` for each species plus the homeostatic pressure.

    ``bound`` is ``B = max_i sup |G_i|``; when not given it is sampled on
    ``[0, p_h + 1] x [0, n_max]``.
    """

    growth: tuple
    p_h: float
    bound: float | None = None
    n_max: float = 1.0
    flags: dict = field(default_factory=dict)
    specs: tuple = ()
    dp: tuple = ()
    dn: tuple = ()

    def __post_init__(self):
        self.growth = tuple(self.growth)
        if not self.dp or not self.dn:
            pairs = [_fd(g) for g in self.growth]
            self.dp = tuple(a for a, _ in pairs)
            self.dn = tuple(b for _, b in pairs)
        if self.bound is None:
            ps, ns = np.meshgrid(np.linspace(0, self.p_h + 1, 101), np.linspace(0, self.n_max, 51))
            vals = [np.abs(g(ps, ns)) for g in self.growth]
            if not all(np.all(np.isfinite(v)) for v in vals):
                raise ModelInvalidError("growth functions must be finite")
            self.bound = float(max(v.max() for v in vals))

    @property
    def species(self) -> int:
        return len(self.growth)

    @classmethod
    def from_specs(cls, specs, p_h, **kw):
        """Build from per-species specs: a preset dict or ``{"expr": "..."}``."""
        fns = []
        for spec in specs:
            spec = dict(spec)
            if "expr" in spec:
                expr = spec.pop("expr")
                fns.append(compile_expression(expr, {"p_h": p_h, **spec}))
            else:
                name = spec.pop("preset")
                fns.append(growth_preset(name, p_h=p_h, **spec))
        return cls(tuple(fns), p_h, specs=tuple(dict(s) for s in specs), **kw)

    def evaluate(self, p, n):
        """Stacked ``G_i(p, n)``, shape (ell, *p.shape)."""
        return np.stack([np.broadcast_to(g(p, n), np.shape(p)) for g in self.growth])


@dataclass(frozen=True)
class NutrientModel:
    alpha: float = 1.0
    beta: tuple = ()
    enabled: bool = True

    def consumption(self, rho_i):
        if not self.beta:
            return np.zeros(rho_i.shape[1:])
        beta = np.asarray(self.beta, dtype=float).reshape((-1,) + (1,) * (rho_i.ndim - 1))
        return np.sum(beta * rho_i, axis=0)


# ---------------------------------------------------------------------------
# state


def fractions(rho_i, threshold=FRACTION_THRESHOLD):
    """Species fractions ``c_i = rho_i / rho`` and the mask where they are defined."""
    rho = np.sum(rho_i, axis=0)
    cut = threshold * max(float(rho.max(initial=0.0)), 0.0)
    mask = rho > cut
    c = np.zeros_like(rho_i)
    safe = np.where(mask, rho, 1.0)
    c[:, mask] = (rho_i / safe)[:, mask]
    return c, mask


@dataclass(frozen=True)
class SpeciesState:
    """Solution tuple ``(rho_1..rho_ell, p, n)`` at time ``t``.

    Densities are stored stacked as ``rho_i`` with shape (ell, *grid.shape).
    """

    grid: GridSpec
    t: float
    rho_i: np.ndarray
    p: np.ndarray
    n: np.ndarray
    law: PressureLaw

    @classmethod
    def from_densities(cls, grid, rho_i, n=None, law=None, t=0.0, p=None):
        rho_i = np.maximum(np.asarray(rho_i, dtype=np.float64), 0.0)
        if rho_i.ndim == grid.dim:
            rho_i = rho_i[None]
        n = np.zeros(grid.shape) if n is None else np.asarray(n, dtype=np.float64)
        if p is None:
            p = pressure_from_density(rho_i.sum(axis=0), law)
        return cls(grid, float(t), rho_i, np.asarray(p, dtype=np.float64), n, law)

    @property
    def species(self) -> int:
        return self.rho_i.shape[0]

    @property
    def rho(self):
        return np.sum(self.rho_i, axis=0)

    def fractions(self):
        return fractions(self.rho_i)

    def field(self, name) -> ScalarField:
        if name == "rho":
            return ScalarField(self.grid, self.rho, self.t, "rho", density=True)
        if name == "p":
            return ScalarField(self.grid, self.p, self.t, "p")
        if name == "n":
            return ScalarField(self.grid, self.n, self.t, "n")
        if name.startswith("rho_"):
            i = int(name[4:]) - 1
            return ScalarField(self.grid, self.rho_i[i], self.t, name, density=True)
        raise KeyError(name)

    def field_names(self):
        return ["rho", "p", "n"] + [f"rho_{i + 1}" for i in range(self.species)]

    def evolve(self, **changes):
        return replace(self, **changes)

    def invariant_violations(self, p_h=None):
        """Messages for every violated state invariant (empty when healthy)."""
        out = []
        if self.rho_i.min(initial=0.0) < -1e-10:
            out.append(f"negative density {self.rho_i.min():.3e}")
        c, mask = self.fractions()
        if mask.any():
            err = float(np.max(np.abs(c[:, mask].sum(axis=0) - 1.0)))
            if err > 1e-8:
                out.append(f"fractions sum off by {err:.3e}")
        if p_h is not None and self.p.max(initial=0.0) > p_h * (1 + 1e-6):
            out.append(f"max pressure {self.p.max():.6g} exceeds p_h={p_h}")
        if not self.law.incompressible:
            gap = float(np.max(np.abs(self.p - np.maximum(self.rho, 0.0) ** self.law.gamma)))
            if gap > 1e-12:
                out.append(f"p differs from rho^gamma by {gap:.3e}")
        return out


def total_growth(state: SpeciesState, model: GrowthModel) -> ScalarField:
    """``G = sum_i c_i G_i(p, n)``; plain species average where ``rho`` vanishes."""
    g = model.evaluate(state.p, state.n)
    return ScalarField(state.grid, mix_growth(g, state.rho_i), state.t, "G")


def mix_growth(g, rho_i):
    c, mask = fractions(rho_i)
    mixed = np.sum(c * g, axis=0)
    return np.where(mask, mixed, np.mean(g, axis=0))


def u_field(state: SpeciesState, model: GrowthModel, growth=None) -> ScalarField:
    """``u = -gamma (lap p + G)``."""
    if state.law.incompressible:
        raise UnsupportedLawError("u is only defined for finite gamma")
    g = total_growth(state, model).values if growth is None else np.asarray(growth)
    u = -state.law.gamma * (lap_array(state.p, state.grid) + g)
    return ScalarField(state.grid, u, state.t, "u")


# ---------------------------------------------------------------------------
# assumption checks


@dataclass
class AssumptionCheck:
    name: str
    passed: bool
    value: float
    witness: tuple
    note: str = ""


def validate_assumptions(model: GrowthModel, p_max=None, n_max=None, samples=(201, 101)):
    """Sample (G1)-(G4) on ``[0, p_max] x [0, n_max]``.

    Returns a dict of :class:`AssumptionCheck` keyed ``"G1"`` .. ``"G4"``.
    """
    p_max = model.p_h + 1.0 if p_max is None else p_max
    n_max = model.n_max if n_max is None else n_max
    ps, ns = np.meshgrid(np.linspace(0.0, p_max, samples[0]),
                         np.linspace(0.0, n_max, samples[1]), indexing="ij")
    g = model.evaluate(ps, ns)
    if not np.all(np.isfinite(g)):
        raise ModelInvalidError("growth functions returned non-finite values")
    dp = np.stack([np.broadcast_to(f(ps, ns), ps.shape) for f in model.dp])
    dn = np.stack([np.broadcast_to(f(ps, ns), ps.shape) for f in model.dn])

    def witness(arr, pick):
        k = np.unravel_index(pick(arr), arr.shape)
        return (int(k[0]) + 1, float(ps[k[1:]]), float(ns[k[1:]]))

    out = {}
    absg = np.abs(g)
    out["G1"] = AssumptionCheck("G1", bool(np.isfinite(absg.max())), float(absg.max()),
                                witness(absg, np.argmax), "sampled sup |G_i|")
    above = ps > model.p_h
    if above.any():
        worst = np.where(above[None], g, -np.inf)
        out["G2"] = AssumptionCheck("G2", bool(worst.max() < 0), float(worst.max()),
                                    witness(worst, np.argmax), "max G_i for p > p_h")
    else:
        out["G2"] = AssumptionCheck("G2", False, float("nan"), (), "no samples above p_h")
    g3 = np.maximum(ps * dp, 0.0) + np.abs(dn)
    out["G3"] = AssumptionCheck("G3", bool(np.all(np.isfinite(g3))), float(g3.max()),
                                witness(g3, np.argmax), "max (p dG/dp)_+ + |dG/dn|")
    g4 = 0.5 * g - ps * dp
    out["G4"] = AssumptionCheck("G4", bool(g4.min() > 0), float(g4.min()),
                                witness(g4, np.argmin), "min G_i/2 - p dG_i/dp")
    return out
