"""Scenario configuration: YAML schema, validation, presets and initial data.

A scenario document has one section per concern::

    name: barenblatt
    grid: {dim: 1, lo: [-2.0], hi: [2.0], cells: [512], boundary: truncated}
    law: {gamma: 2.0}                 # or gamma: inf
    growth: {p_h: 1.0, species: [{preset: constant, value: 0.0}]}
    nutrient: {enabled: false}
    initial: {preset: barenblatt, params: {t0: 1.0}}
    solver: {dt: 0.01}
    run: {horizon: 1.0}

Every section is optional except ``initial``; missing keys take the dataclass
defaults below.  ``parse_config`` collects every violation before raising.
"""
from __future__ import annotations

import copy
import difflib
import math
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .analytic import Barenblatt
from .fields import GridSpec, load_snapshot
from .model import INFINITE, GrowthModel, NutrientModel, PressureLaw, growth_preset

INITIAL_PRESETS = ("barenblatt", "two-blob-segregation", "tumor-nutrient-disk", "custom-from-file")
GROWTH_PRESETS = ("linear-homeostatic", "nutrient-gated", "constant")
DIAGNOSTICS = ("mass", "moments", "entropy", "ab", "weighted_l1", "hessian", "mixing",
               "max_pressure", "nutrient", "maximal", "stability", "flows")
ID_FLAGS = ("ID1", "ID2", "ID3", "ID4", "ID5")


class ConfigError(ValueError):
    """All violations found in one document."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid scenario config:\n  " + "\n  ".join(self.violations))


# ---------------------------------------------------------------------------
# schema


@dataclass(frozen=True)
class GridSection:
    dim: int = 1
    lo: tuple = (-2.0,)
    hi: tuple = (2.0,)
    cells: tuple = (256,)
    boundary: str = "truncated"


@dataclass(frozen=True)
class LawSection:
    gamma: float = 2.0


@dataclass(frozen=True)
class GrowthSection:
    p_h: float = 1.0
    species: tuple = ({"preset": "linear-homeostatic", "g0": 1.0},)
    bound: float | None = None
    n_max: float = 1.0


@dataclass(frozen=True)
class NutrientSection:
    enabled: bool = False
    alpha: float = 1.0
    beta: tuple = ()
    initial: dict = field(default_factory=lambda: {"kind": "zero"})


@dataclass(frozen=True)
class InitialSection:
    preset: str = "barenblatt"
    params: dict = field(default_factory=dict)
    flags: tuple = ()
    lam: float | None = None


@dataclass(frozen=True)
class SolverSection:
    dt: float = 1e-3
    cfl: float = 0.5
    tol_fp: float = 1e-10
    max_iter: int = 100
    eps0: float = 1e-8
    eps_min: float = 1e-8
    tol_lin: float = 1e-12
    linear_solver: str = "auto"


@dataclass(frozen=True)
class ObstacleSection:
    tol_ob: float = 1e-10
    max_sweeps: int = 200000
    omega_sor: float | None = None


@dataclass(frozen=True)
class RunSection:
    horizon: float = 1.0
    history_stride: int = 1


@dataclass(frozen=True)
class DiagnosticsSection:
    enabled: tuple = ("mass", "moments", "entropy", "max_pressure", "mixing")
    sample_times: tuple = ()
    lam: float = 0.5
    regime: str = "z"
    pairs: int = 1000
    flow_cfl: float = 0.5
    flow_block: int = 4
    particles_per_cell: int = 4
    representation_tol: float = 0.05
    nonmixing_tol: float | None = None


@dataclass(frozen=True)
class ProbeSection:
    eps: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    mode: int = 1
    pairs: tuple = ((1.0, 1.0),)


@dataclass(frozen=True)
class SweepSection:
    gammas: tuple = (5.0, 10.0, 20.0, 40.0)


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs"
    snapshots: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    grid: GridSection = GridSection()
    law: LawSection = LawSection()
    growth: GrowthSection = GrowthSection()
    nutrient: NutrientSection = NutrientSection()
    initial: InitialSection = InitialSection()
    solver: SolverSection = SolverSection()
    obstacle: ObstacleSection = ObstacleSection()
    run: RunSection = RunSection()
    diagnostics: DiagnosticsSection = DiagnosticsSection()
    probes: ProbeSection = ProbeSection()
    sweep: SweepSection = SweepSection()
    output: OutputSection = OutputSection()

    @property
    def incompressible(self) -> bool:
        return math.isinf(self.law.gamma)

    def grid_spec(self) -> GridSpec:
        g = self.grid
        return GridSpec(tuple(g.lo), tuple(g.hi), tuple(g.cells), g.boundary)

    def pressure_law(self) -> PressureLaw:
        return PressureLaw(INFINITE if self.incompressible else self.law.gamma)

    def growth_model(self) -> GrowthModel:
        g = self.growth
        return GrowthModel.from_specs([dict(s) for s in g.species], g.p_h, bound=g.bound, n_max=g.n_max)

    def nutrient_model(self) -> NutrientModel | None:
        if not self.nutrient.enabled:
            return None
        return NutrientModel(self.nutrient.alpha, tuple(self.nutrient.beta), True)

    def with_overrides(self, cells=None, dt=None):
        """Copy with every grid axis set to ``cells`` and/or the solver step set to ``dt``."""
        cfg = self
        if cells is not None:
            cfg = _replace(cfg, grid=_replace(cfg.grid, cells=tuple(int(cells) for _ in cfg.grid.cells)))
        if dt is not None:
            cfg = _replace(cfg, solver=_replace(cfg.solver, dt=float(dt)))
        return cfg


def _replace(obj, **kw):
    from dataclasses import replace
    return replace(obj, **kw)


# ---------------------------------------------------------------------------
# parsing


def _freeze(value):
    """Lists become tuples (recursively) so configs compare and hash by value."""
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return {k: _freeze(v) for k, v in value.items()}
    return value


def _number(value):
    if isinstance(value, str) and value.strip().lower() in ("inf", "infinity", "+inf"):
        return math.inf
    if isinstance(value, bool):
        raise TypeError("boolean where a number is expected")
    return float(value)


def _nearest(key, options):
    hits = difflib.get_close_matches(key, options, n=1, cutoff=0.0)
    return hits[0] if hits else None


def _coerce(section_cls, data, where, errors):
    """Build ``section_cls`` from ``data``, appending messages to ``errors``."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        errors.append(f"{where}: expected a mapping, got {type(data).__name__}")
        return section_cls()
    known = {f.name: f for f in fields(section_cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            near = _nearest(str(key), list(known))
            errors.append(f"{where}.{key}: unknown key (did you mean '{near}'?)")
            continue
        default = getattr(section_cls(), key)
        if is_dataclass(default):
            kwargs[key] = _coerce(type(default), value, f"{where}.{key}" if where else key, errors)
            continue
        try:
            kwargs[key] = _convert(default, value, known[key].type)
        except (TypeError, ValueError) as exc:
            errors.append(f"{where}.{key}: {exc}")
    return section_cls(**kwargs)


def _convert(default, value, annotation):
    value = _freeze(value)
    if value is None:
        if "None" in str(annotation):
            return None
        raise ValueError("null not allowed")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or int(value) != value:
            raise TypeError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float) or (default is None and "float" in str(annotation)):
        return _number(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError(f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, tuple):
            value = (value,)
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise TypeError(f"expected a mapping, got {value!r}")
        return value
    return value


def _numeric_tuple(values, where, errors, integer=False):
    out = []
    for v in values:
        try:
            out.append(int(v) if integer else _number(v))
        except (TypeError, ValueError):
            errors.append(f"{where}: {v!r} is not a number")
    return tuple(out)


def _validate(cfg: ScenarioConfig, errors):
    g = cfg.grid
    if g.dim not in (1, 2):
        errors.append("grid.dim: must be 1 or 2")
    lo = _numeric_tuple(g.lo, "grid.lo", errors)
    hi = _numeric_tuple(g.hi, "grid.hi", errors)
    cells = _numeric_tuple(g.cells, "grid.cells", errors, integer=True)
    for name, arr in (("lo", lo), ("hi", hi), ("cells", cells)):
        if len(arr) != g.dim:
            errors.append(f"grid.{name}: needs {g.dim} entries, got {len(arr)}")
    if len(lo) == len(hi) == len(cells) == g.dim:
        if any(b <= a for a, b in zip(lo, hi)):
            errors.append("grid: hi must exceed lo on every axis")
        if any(n < 8 for n in cells):
            errors.append("grid.cells: at least 8 cells per axis")
        widths = [(b - a) / n for a, b, n in zip(lo, hi, cells)]
        if len(set(round(w, 12) for w in widths)) > 1:
            errors.append("grid: spacing must be equal on every axis")
    if g.boundary not in ("truncated", "periodic"):
        errors.append(f"grid.boundary: '{g.boundary}' (expected truncated or periodic)")

    if not cfg.law.gamma >= 1:
        errors.append(f"law.gamma: gamma >= 1 required, got {cfg.law.gamma}")

    gr = cfg.growth
    if not gr.p_h > 0:
        errors.append("growth.p_h: must be positive")
    if not gr.species:
        errors.append("growth.species: at least one species")
    for k, spec in enumerate(gr.species):
        where = f"growth.species[{k}]"
        if not isinstance(spec, dict):
            errors.append(f"{where}: expected a mapping")
            continue
        if "expr" in spec:
            continue
        preset = spec.get("preset")
        if preset not in GROWTH_PRESETS:
            near = _nearest(str(preset), list(GROWTH_PRESETS))
            errors.append(f"{where}.preset: unknown growth preset '{preset}' (did you mean '{near}'?)")
            continue
        try:
            growth_preset(preset, **{k2: v for k2, v in spec.items() if k2 != "preset"})
        except Exception as exc:  # bad parameter names surface from the expression compiler
            errors.append(f"{where}: {exc}")

    nu = cfg.nutrient
    if nu.enabled:
        if len(nu.beta) not in (0, len(gr.species)):
            errors.append(f"nutrient.beta: needs {len(gr.species)} entries")
        if nu.alpha < 0 or any(b < 0 for b in _numeric_tuple(nu.beta, "nutrient.beta", errors)):
            errors.append("nutrient: alpha and beta must be nonnegative")
        kind = nu.initial.get("kind", "zero")
        if kind not in ("zero", "constant", "gaussian", "file"):
            errors.append(f"nutrient.initial.kind: unknown kind '{kind}'")

    ini = cfg.initial
    if ini.preset not in INITIAL_PRESETS:
        near = _nearest(str(ini.preset), list(INITIAL_PRESETS))
        errors.append(f"initial.preset: unknown preset '{ini.preset}' (did you mean '{near}'?)")
    for flag in ini.flags:
        if flag not in ID_FLAGS:
            errors.append(f"initial.flags: unknown flag '{flag}'")
    if ini.lam is not None and cfg.diagnostics.lam > ini.lam:
        errors.append(f"diagnostics.lam: {cfg.diagnostics.lam} exceeds the declared initial.lam {ini.lam}")

    s = cfg.solver
    if not s.dt > 0:
        errors.append("solver.dt: must be positive")
    if not 0 < s.cfl <= 1:
        errors.append("solver.cfl: must lie in (0, 1]")
    if s.max_iter < 2:
        errors.append("solver.max_iter: at least 2")
    if s.linear_solver not in ("auto", "cg", "direct"):
        errors.append("solver.linear_solver: auto, cg or direct")
    if cfg.obstacle.omega_sor is not None and not 0 < cfg.obstacle.omega_sor < 2:
        errors.append("obstacle.omega_sor: must lie in (0, 2)")
    if not cfg.run.horizon >= 0:
        errors.append("run.horizon: must be nonnegative")
    if cfg.run.history_stride < 1:
        errors.append("run.history_stride: at least 1")

    d = cfg.diagnostics
    for name in d.enabled:
        if name not in DIAGNOSTICS:
            errors.append(f"diagnostics.enabled: unknown functional '{name}' "
                          f"(did you mean '{_nearest(str(name), list(DIAGNOSTICS))}'?)")
    if d.particles_per_cell < 1:
        errors.append("diagnostics.particles_per_cell: at least 1")
    if not 0 < d.lam < 1:
        errors.append("diagnostics.lam: must lie in (0, 1)")
    if d.regime not in ("z", "basic"):
        errors.append("diagnostics.regime: z or basic")
    if d.regime == "basic" and cfg.incompressible:
        errors.append("diagnostics.regime: gamma = inf requires the z regime")
    if any(t < 0 or t > cfg.run.horizon for t in _numeric_tuple(d.sample_times, "diagnostics.sample_times", errors)):
        errors.append("diagnostics.sample_times: must lie in [0, run.horizon]")
    if any(e <= 0 for e in _numeric_tuple(cfg.probes.eps, "probes.eps", errors)):
        errors.append("probes.eps: must be positive")
    if any(not gm >= 1 for gm in _numeric_tuple(cfg.sweep.gammas, "sweep.gammas", errors)):
        errors.append("sweep.gammas: gamma >= 1 required")


def parse_config(text) -> ScenarioConfig:
    """Parse and validate a YAML scenario; raises :class:`ConfigError` listing every problem."""
    try:
        data = yaml.safe_load(text) if isinstance(text, str) else text
    except yaml.YAMLError as exc:
        raise ConfigError([f"not valid YAML: {exc}"]) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"])
    errors = []
    cfg = _coerce(ScenarioConfig, data, "", errors)
    errors = [e.lstrip(".") for e in errors]
    cfg = _normalise(cfg)
    _validate(cfg, errors)
    if not errors and cfg.initial.flags:
        errors.extend(check_id_flags(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _normalise(cfg):
    """Canonical numeric types so that parse(render(cfg)) == cfg."""
    g = cfg.grid
    try:
        grid = _replace(g, lo=tuple(float(v) for v in g.lo), hi=tuple(float(v) for v in g.hi),
                        cells=tuple(int(v) for v in g.cells))
    except (TypeError, ValueError):
        grid = g
    try:
        probes = _replace(cfg.probes, eps=tuple(float(e) for e in cfg.probes.eps),
                          pairs=tuple(tuple(float(v) for v in p) for p in cfg.probes.pairs))
        diag = _replace(cfg.diagnostics, sample_times=tuple(float(t) for t in cfg.diagnostics.sample_times))
        sweep = _replace(cfg.sweep, gammas=tuple(_number(v) for v in cfg.sweep.gammas))
        nutrient = _replace(cfg.nutrient, beta=tuple(float(b) for b in cfg.nutrient.beta))
    except (TypeError, ValueError):
        return _replace(cfg, grid=grid)
    return _replace(cfg, grid=grid, probes=probes, diagnostics=diag, sweep=sweep, nutrient=nutrient)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    cfg = parse_config(path.read_text())
    return _resolve_paths(cfg, path.parent)


def _resolve_paths(cfg, base):
    """Make file references in ``initial.params`` relative to the config file."""
    params = dict(cfg.initial.params)
    changed = False
    for key in ("stems", "nutrient_stem"):
        if key not in params:
            continue
        vals = params[key] if isinstance(params[key], tuple) else (params[key],)
        resolved = tuple(str(Path(base, v)) if not Path(v).is_absolute() else v for v in vals)
        params[key] = resolved if isinstance(params[key], tuple) else resolved[0]
        changed = True
    if not changed:
        return cfg
    return _replace(cfg, initial=_replace(cfg.initial, params=params))


def _plain(value):
    if is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def render_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(_plain(cfg), sort_keys=False, default_flow_style=None)


def config_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


# ---------------------------------------------------------------------------
# initial data


def _blob(grid, centre, half_width):
    pts = grid.coords()
    if grid.dim == 1:
        return (np.abs(pts[0] - centre[0]) < half_width).astype(float)
    r2 = sum((c - x0) ** 2 for c, x0 in zip(pts, centre))
    return (r2 < half_width**2).astype(float)


def _centre(value, dim):
    value = value if isinstance(value, tuple) else (value,)
    return tuple(float(v) for v in value) + (0.0,) * (dim - len(value))


def initial_data(cfg: ScenarioConfig, grid: GridSpec | None = None):
    """``(rho_i0, n0, t0)`` for the configured preset."""
    grid = grid or cfg.grid_spec()
    prm = cfg.initial.params
    preset = cfg.initial.preset
    ell = len(cfg.growth.species)
    t0 = float(prm.get("t0", 0.0))
    if preset == "barenblatt":
        gamma = float(prm.get("gamma", cfg.law.gamma))
        bb = Barenblatt(gamma, grid.dim, float(prm.get("radius_at_1", 1.0)))
        t0 = float(prm.get("t0", 1.0))
        rho = bb.density(t0, grid.radius2())
        rho_i = np.stack([rho / ell] * ell)
    elif preset == "two-blob-segregation":
        centres = prm.get("centres", (-0.55, 0.4))
        widths = prm.get("half_widths", (0.45, 0.3))
        level = float(prm.get("density", 1.0))
        rho_i = np.stack([level * _blob(grid, _centre(c, grid.dim), float(w)) for c, w in zip(centres, widths)])
        if rho_i.shape[0] != ell:
            raise ValueError(f"two-blob-segregation defines {rho_i.shape[0]} species, growth has {ell}")
    elif preset == "tumor-nutrient-disk":
        radius = float(prm.get("radius", 0.5))
        level = float(prm.get("density", 0.8))
        rho = level * _blob(grid, (0.0,) * grid.dim, radius)
        rho_i = np.stack([rho / ell] * ell)
    elif preset == "custom-from-file":
        stems = prm.get("stems", ())
        stems = stems if isinstance(stems, tuple) else (stems,)
        fields_ = [load_snapshot(s) for s in stems]
        for f in fields_:
            if f.grid.shape != grid.shape:
                raise ValueError(f"snapshot {f.name} has shape {f.grid.shape}, grid is {grid.shape}")
        rho_i = np.stack([f.values for f in fields_])
        t0 = float(prm.get("t0", fields_[0].t if fields_ else 0.0))
    else:
        raise ValueError(f"unknown initial preset {preset!r}")
    return np.maximum(rho_i, 0.0), nutrient_initial(cfg, grid), t0


def nutrient_initial(cfg, grid):
    nu = cfg.nutrient
    if not nu.enabled:
        return np.zeros(grid.shape)
    spec = nu.initial
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return np.zeros(grid.shape)
    if kind == "constant":
        return np.full(grid.shape, float(spec.get("value", 1.0)))
    if kind == "gaussian":
        amp = float(spec.get("amplitude", 1.0))
        width = float(spec.get("width", 0.25))
        return amp * np.exp(-grid.radius2() / width**2)
    if kind == "file":
        return load_snapshot(spec["stem"]).values
    raise ValueError(f"unknown nutrient initial kind {kind!r}")


def check_id_flags(cfg):
    """Violations of declared initial-data flags against the generated data."""
    out = []
    try:
        rho_i, n0, _ = initial_data(cfg)
    except (OSError, ValueError, KeyError) as exc:
        return [f"initial: could not build initial data ({exc})"]
    rho = rho_i.sum(axis=0)
    flags = set(cfg.initial.flags)
    if "ID4" in flags:
        bad = ~(np.isclose(rho, 0.0, atol=1e-12) | np.isclose(rho, 1.0, atol=1e-12))
        if bad.any():
            k = tuple(int(i) for i in np.argwhere(bad)[0])
            out.append(f"initial.flags: ID4 requires rho0 in {{0, 1}}; cell {k} holds {rho[k]:.6g}")
    if "ID1" in flags and (rho_i.min() < 0 or n0.min() < 0):
        out.append("initial.flags: ID1 requires nonnegative data")
    if "ID2" in flags and cfg.pressure_law().incompressible is False:
        p_max = float(rho.max(initial=0.0)) ** cfg.law.gamma
        if p_max > cfg.growth.p_h * (1 + 1e-12):
            out.append(f"initial.flags: ID2 requires p0 <= p_h, max p0 = {p_max:.6g}")
    if "ID3" in flags and n0.max(initial=0.0) > cfg.growth.n_max * (1 + 1e-12):
        out.append("initial.flags: ID3 requires n0 <= growth.n_max")
    return out


# ---------------------------------------------------------------------------
# presets


_BUILTIN = {
    "barenblatt": {
        "name": "barenblatt",
        "grid": {"dim": 1, "lo": [-2.0], "hi": [2.0], "cells": [512]},
        "law": {"gamma": 2.0},
        "growth": {"p_h": 1.0, "species": [{"preset": "constant", "value": 0.0}]},
        "initial": {"preset": "barenblatt", "params": {"t0": 1.0, "radius_at_1": 1.0}},
        "solver": {"dt": 0.01},
        "run": {"horizon": 1.0},
        "diagnostics": {"enabled": ["mass", "moments", "entropy", "max_pressure", "ab", "weighted_l1",
                                    "hessian", "maximal", "flows"],
                        "sample_times": [0.5]},
    },
    "two-blob-segregation": {
        "name": "two-blob-segregation",
        "grid": {"dim": 1, "lo": [-2.0], "hi": [2.0], "cells": [512]},
        "law": {"gamma": 10.0},
        "growth": {"p_h": 1.0, "species": [{"preset": "linear-homeostatic", "g0": 1.0},
                                           {"preset": "linear-homeostatic", "g0": 1.0}]},
        "initial": {"preset": "two-blob-segregation",
                    "params": {"centres": [-0.55, 0.4], "half_widths": [0.45, 0.3], "density": 1.0},
                    "flags": ["ID4"]},
        "solver": {"dt": 0.003},
        "run": {"horizon": 1.0},
        "diagnostics": {"enabled": ["mass", "max_pressure", "mixing", "flows"], "sample_times": [0.5]},
    },
    "segregation-counterexample": {
        "name": "segregation-counterexample",
        "grid": {"dim": 1, "lo": [-2.0], "hi": [2.0], "cells": [512]},
        "law": {"gamma": "inf"},
        "growth": {"p_h": 1.0, "species": [{"preset": "linear-homeostatic", "g0": 1.0},
                                           {"preset": "constant", "value": -1.0}]},
        "initial": {"preset": "two-blob-segregation",
                    "params": {"centres": [-0.4, 0.3], "half_widths": [0.4, 0.3], "density": 1.0},
                    "flags": ["ID4"]},
        "solver": {"dt": 0.003},
        "run": {"horizon": 1.0},
        "diagnostics": {"enabled": ["mass", "max_pressure", "mixing"], "sample_times": [0.5]},
    },
    "tumor-nutrient-disk": {
        "name": "tumor-nutrient-disk",
        "grid": {"dim": 2, "lo": [-2.0, -2.0], "hi": [2.0, 2.0], "cells": [64, 64]},
        "law": {"gamma": 5.0},
        "growth": {"p_h": 1.0, "species": [{"preset": "nutrient-gated", "g0": 1.0, "delta": 1.0}]},
        "nutrient": {"enabled": True, "alpha": 1.0, "beta": [1.0], "initial": {"kind": "constant", "value": 1.0}},
        "initial": {"preset": "tumor-nutrient-disk", "params": {"radius": 0.5, "density": 0.8},
                    "flags": ["ID2", "ID3"]},
        "solver": {"dt": 0.01},
        "run": {"horizon": 0.5},
        "diagnostics": {"enabled": ["mass", "moments", "entropy", "max_pressure", "nutrient", "ab"],
                        "sample_times": [0.25]},
    },
}

BUILTIN_PRESETS = tuple(_BUILTIN)


def preset_dict(name) -> dict:
    """Editable copy of a built-in scenario document."""
    if name not in _BUILTIN:
        near = _nearest(name, list(_BUILTIN))
        raise KeyError(f"unknown scenario preset {name!r} (did you mean {near!r}?)")
    return copy.deepcopy(_BUILTIN[name])


def preset_config(name) -> ScenarioConfig:
    return parse_config(preset_dict(name))


def preset_text(name) -> str:
    return render_config(preset_config(name))
