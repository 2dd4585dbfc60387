"""Scenario orchestration: solve, trace flows, evaluate diagnostics, write reports.

A run directory holds::

    config.yaml          the resolved scenario
    snapshots/           <k>_<field>.json/.bin per stored state
    trajectories.csv     forward particle paths (when flows are enabled)
    diagnostics.csv/json DiagnosticsReport
    summary.json         every enabled check with pass/fail, run flags

Nothing written depends on wall-clock time, so repeated runs are byte-identical.
"""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import flow
from .config import ScenarioConfig, config_dict, initial_data, render_config
from .fields import ScalarField, integral, lap_array, save_snapshot
from .hele_shaw import (ObstacleConfig, gamma_family, gamma_sweep, incompressible_state, incompressible_stepper,
                        write_sweep)
from .model import SpeciesState, validate_assumptions
from .solver import SolverConfig, config_hash, run

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "PMEFLOW_OUTPUT_ROOT"
MAX_PRESSURE_SLACK = 1e-6
MASS_EXACT = 1e-10
MASS_LEDGER = 1e-2
MAXIMAL_SLACK = 0.05


class RunError(RuntimeError):
    """A module error with the scenario and step it happened in."""


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    note: str = ""

    def to_dict(self):
        return {"passed": bool(self.passed), "value": _finite(self.value), "limit": _finite(self.limit),
                "note": self.note}


@dataclass
class RunOutcome:
    directory: Path
    checks: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 0 if all(c.passed for c in self.checks) else 1


def _finite(v):
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def output_root(default="."):
    return Path(os.environ.get(OUTPUT_ROOT_ENV, default))


def run_directory(cfg: ScenarioConfig, root=None):
    root = Path(root) if root is not None else output_root()
    out = Path(cfg.output.dir)
    return (out if out.is_absolute() else root / out) / cfg.name


# ---------------------------------------------------------------------------
# solving


def solver_config(cfg: ScenarioConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(dt=s.dt, cfl=s.cfl, tol_fp=s.tol_fp, max_iter=s.max_iter, eps0=s.eps0,
                        eps_min=s.eps_min, tol_lin=s.tol_lin, linear_solver=s.linear_solver)


def obstacle_config(cfg: ScenarioConfig) -> ObstacleConfig:
    o = cfg.obstacle
    return ObstacleConfig(tol_ob=o.tol_ob, max_sweeps=o.max_sweeps, omega_sor=o.omega_sor)


def initial_state(cfg: ScenarioConfig, model=None):
    grid = cfg.grid_spec()
    model = model or cfg.growth_model()
    rho_i, n0, t0 = initial_data(cfg, grid)
    if cfg.incompressible:
        return incompressible_state(grid, rho_i, model, n0, t0, obstacle_config(cfg))
    return SpeciesState.from_densities(grid, rho_i, n0, cfg.pressure_law(), t0)


def simulate(cfg: ScenarioConfig):
    """Solve the scenario; returns ``(trajectory, model, nutrient_history)``."""
    model = cfg.growth_model()
    nutrient = cfg.nutrient_model()
    scfg = solver_config(cfg)
    state = initial_state(cfg, model)
    t0 = state.t
    stops = [t0 + t for t in cfg.diagnostics.sample_times]
    stops += [t0 + s for s, _ in cfg.probes.pairs] if "stability" in cfg.diagnostics.enabled else []
    history = [state.n]
    stride = cfg.run.history_stride

    def keep_nutrient(s, k):
        if k % stride == 0:
            history.append(s.n)

    stepper = None
    if cfg.incompressible:
        stepper = incompressible_stepper(model, scfg, obstacle_config(cfg), nutrient)
    try:
        traj = run(state, cfg.run.horizon, model, scfg, nutrient, snapshot_times=stops,
                   hooks=(keep_nutrient,), stepper=stepper, history_stride=stride)
    except Exception as exc:
        raise RunError(f"scenario {cfg.name!r}: solver failed ({exc})") from exc
    return traj, model, history


# ---------------------------------------------------------------------------
# diagnostics


def _series_times(traj):
    return np.asarray(traj.times) - traj.times[0]


def _fit_rate(times, values):
    """Least-squares slope of a series against time."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 2 or np.ptp(t) == 0:
        return 0.0
    return float(np.polyfit(t, v, 1)[0])


def _probe_field(grid, mode):
    """Smooth comparison field ``w = (sin(mode x_1), 0)``."""
    w = np.zeros((grid.dim,) + grid.shape)
    w[0] = np.sin(mode * grid.coords()[0])
    return w


def evaluate(cfg: ScenarioConfig, traj, model, nutrient_history, directory=None):
    """Fill a :class:`DiagnosticsReport` and the list of checks for a finished run."""
    grid = traj.grid
    enabled = set(cfg.diagnostics.enabled)
    report = dg.DiagnosticsReport(grid.h, cfg.solver.dt)
    checks = []
    flags = list(traj.flags)
    times = np.asarray(traj.times)
    rel = _series_times(traj)
    finite = not cfg.incompressible
    gamma = cfg.law.gamma
    d = cfg.diagnostics

    assumptions = validate_assumptions(model)
    report.constants["assumptions"] = {k: {"passed": a.passed, "value": a.value, "witness": list(a.witness)}
                                      for k, a in assumptions.items()}
    report.constants.update({"B": model.bound, "p_h": model.p_h, "gamma": "inf" if not finite else gamma,
                             "lam": d.lam, "t0": float(times[0])})

    # state invariants at every stored snapshot
    g2 = assumptions["G2"].passed and float(traj.snapshots[0].p.max(initial=0.0)) <= model.p_h * (1 + 1e-12)
    bad = []
    for snap in traj.snapshots:
        for msg in snap.invariant_violations(model.p_h if g2 else None):
            bad.append(f"t={snap.t:.6g}: {msg}")
    checks.append(Check("state_invariants", not bad, len(bad), 0, "; ".join(bad[:5])))
    neg = min(float(r.min()) for r in traj.densities)
    checks.append(Check("nonnegative_density", neg >= -1e-10, neg, -1e-10))

    masses = [integral(r.sum(axis=0), grid) for r in traj.densities]
    if "mass" in enabled:
        report.add_series("mass", rel, masses)
        ledger, _ = dg.mass_ledger(traj)
        report.constants["mass_ledger"] = ledger
        if model.bound == 0.0:
            drift = abs(masses[-1] - masses[0])
            checks.append(Check("mass_conservation", drift <= MASS_EXACT * masses[0], drift, MASS_EXACT * masses[0]))
        else:
            checks.append(Check("mass_ledger", abs(ledger) <= MASS_LEDGER * masses[0], abs(ledger),
                                MASS_LEDGER * masses[0]))

    if "max_pressure" in enabled:
        pmax = [float(p.max(initial=0.0)) for p in traj.pressures]
        report.add_series("max_pressure", rel, pmax)
        if g2:
            limit = model.p_h * (1 + MAX_PRESSURE_SLACK)
            checks.append(Check("max_pressure", max(pmax) <= limit, max(pmax), limit))
        else:
            flags.append("max_pressure check skipped: G2 fails or p0 > p_h")

    if not grid.periodic:
        final_ok = grid.buffer_ok(traj.final.rho, tol=1e-12)
        checks.append(Check("support_buffer", final_ok, float(final_ok), 1.0,
                            f"nonzero density within {grid.buffer_cells} cells of the edge" if not final_ok else ""))

    if "moments" in enabled or "entropy" in enabled:
        for snap in traj.snapshots:
            rec = dg.entropy_and_moments(snap)
            for key, val in rec.items():
                if key == "mass":
                    continue
                report.add(key, snap.t - times[0], val)
        lhs, rhs = dg.moment_bound(traj, model.bound)
        report.constants["moment_bound"] = {"lhs": lhs, "rhs": rhs}
        checks.append(Check("moment_bound", lhs <= rhs * (1 + 1e-9), lhs, rhs))

    if "mixing" in enabled and traj.densities[0].shape[0] > 1:
        ell = traj.densities[0].shape[0]
        worst = []
        for k, dens in enumerate(traj.densities):
            m = flow.mixing_metric(SpeciesState(grid, times[k], dens, traj.pressures[k], traj.final.n, traj.law))
            for i in range(ell):
                for j in range(i + 1, ell):
                    report.add(f"mixing_{i + 1}_{j + 1}", rel[k], m[i, j])
            worst.append(float(m.max()))
        report.constants["mixing_max"] = max(worst)
        report.constants["mixing_max_relative"] = max(w / max(mm, 1e-300) for w, mm in zip(worst, masses))
        if d.nonmixing_tol is not None:
            val = report.constants["mixing_max_relative"]
            checks.append(Check("nonmixing", val <= d.nonmixing_tol, val, d.nonmixing_tol))

    if finite and ("ab" in enabled or "weighted_l1" in enabled):
        weight = dg.build_weight(d.lam, gamma, d.regime, model.p_h)
        report.constants["weight"] = {"regime": weight.regime, "concave": weight.concave,
                                      "w3_constant": weight.w3_constant}
        if "ab" in enabled:
            ab = dg.ab_functional(traj, weight)
            report.add_series("ab_functional", rel, ab)
            report.constants["ab_rate"] = _fit_rate(rel, ab)
            lows = [gamma * float(np.min(lap_array(p, grid))) * t for p, t in zip(traj.pressures, times)]
            report.add_series("ab_gamma_lap_p_t", rel, lows)
            report.constants["ab_gamma_lap_p_t_min"] = min(lows)
        if "weighted_l1" in enabled:
            cum, masses_l = dg.weighted_l1_u(traj, d.lam)
            report.add_series("weighted_l1_u", rel, cum)
            report.add_series("weighted_l1_mass", rel, masses_l)
            report.constants["weighted_l1_rate"] = _fit_rate(rel, cum)
            degenerate = [dg.degenerate_mass(r.sum(axis=0), p, grid) for r, p in zip(traj.densities, traj.pressures)]
            report.add_series("degenerate_mass", rel, degenerate)
    elif not finite and ({"ab", "weighted_l1"} & enabled):
        flags.append("ab/weighted_l1 need finite gamma; skipped")

    if "hessian" in enabled:
        hess, grads = dg.hessian_functional(traj)
        report.add_series("hessian_functional", rel, hess)
        report.add_series("grad_p_l2", rel, grads)

    if "nutrient" in enabled:
        if cfg.nutrient.enabled and len(nutrient_history) == len(traj.times):
            consts = dg.nutrient_constants(traj, nutrient_history)
            report.constants["nutrient"] = consts
            n_min = min(float(n.min()) for n in nutrient_history)
            n_max = max(float(n.max()) for n in nutrient_history)
            report.constants["nutrient_range"] = [n_min, n_max]
            n0_max = float(nutrient_history[0].max())
            checks.append(Check("nutrient_bounds", n_min >= -1e-12 and n_max <= n0_max * (1 + 1e-12),
                                n_max, n0_max, "0 <= n <= max n0"))
        else:
            flags.append("nutrient diagnostics need the nutrient enabled and history_stride = 1")

    if "maximal" in enabled:
        p_final = ScalarField(grid, traj.final.p, traj.final.t, "p")
        ratio = dg.maximal_inequality(p_final, d.pairs, cfg.seed)
        report.constants["maximal_ratio"] = ratio
        checks.append(Check("maximal_inequality", ratio <= 1 + MAXIMAL_SLACK, ratio, 1 + MAXIMAL_SLACK))

    if "flows" in enabled:
        _flow_diagnostics(cfg, traj, model, report, checks, directory)

    if "stability" in enabled:
        _stability(cfg, traj, model, report, checks)

    if report.flags:
        flags.extend(report.flags)
    checks.append(Check("finite_diagnostics", not report.flags, len(report.flags), 0))
    return report, checks, flags


def _flow_diagnostics(cfg, traj, model, report, checks, directory):
    grid = traj.grid
    d = cfg.diagnostics
    source = flow.VelocitySource.from_trajectory(traj, with_ledger=not cfg.incompressible)
    ens = flow.ParticleEnsemble.seed(traj.snapshots[0], per_cell=d.particles_per_cell)
    t0 = traj.times[0]
    horizon = traj.times[-1] - t0
    samples = [t0 + t for t in d.sample_times]
    record = flow.advance_forward(ens, source, horizon, d.flow_cfl, samples)
    if directory is not None:
        flow.export_trajectories(record, Path(directory) / "trajectories.csv")
    final = record.final
    end = traj.final
    worst = 0.0
    for i in range(end.species):
        rec = flow.reconstruct_species(final, i).values
        mass = integral(end.rho_i[i], grid)
        err = flow.block_l1(rec, end.rho_i[i], grid, d.flow_block) / max(mass, 1e-300)
        report.add(f"representation_l1_{i + 1}", horizon, err)
        worst = max(worst, err)
    checks.append(Check("representation", worst <= d.representation_tol, worst, d.representation_tol))
    pushed = flow.deposit(final).values
    viol = flow.sandwich(pushed, end.rho, model.bound, horizon, grid, d.flow_block)
    report.constants["pushforward_sandwich_violation"] = viol
    if model.bound == 0.0:
        err = flow.block_l1(pushed, end.rho, grid, d.flow_block) / max(integral(end.rho, grid), 1e-300)
        report.constants["pushforward_l1"] = err
    if not cfg.incompressible:
        report.constants["pressure_ledger"] = flow.pressure_ledger(final, source)


def _stability(cfg, traj, model, report, checks):
    if cfg.incompressible:
        report.flags.append("stability probes need finite gamma; skipped")
        return
    d = cfg.diagnostics
    t0 = traj.times[0]
    source = flow.VelocitySource.from_trajectory(traj)
    w = _probe_field(traj.grid, cfg.probes.mode)
    pairs = [(t0 + s, t) for s, t in cfg.probes.pairs]
    horizon = traj.times[-1] - t0
    rows = []
    for eps in cfg.probes.eps:
        probe = dg.StabilityProbe.perturbation(traj, eps, w, source)
        res = dg.flow_distance(probe, traj, pairs, d.lam, d.flow_cfl, source)
        ratio = dg.i_bound_ratio(res["results"], res["delta"], model.bound, horizon, d.lam)
        sup_i = max((r.I for r in res["results"] if not math.isnan(r.I)), default=0.0)
        sup_j = max((r.J for r in res["results"] if not math.isnan(r.J)), default=0.0)
        rows.append({"eps": eps, "delta": res["delta"], "forward": res["forward"], "backward": res["backward"],
                     "I": sup_i, "J": sup_j, "i_ratio": ratio, "loglog": dg.loglog(res["delta"])})
    report.constants["stability"] = rows
    ordered = sorted(rows, key=lambda r: -r["eps"])
    dist = [max(r["forward"], r["backward"]) for r in ordered]
    mono = all(b < a for a, b in zip(dist, dist[1:]))
    checks.append(Check("stability_monotone", mono, float(mono), 1.0, "flow distance decreases with eps"))
    ratios = [r["i_ratio"] for r in rows if r["i_ratio"] > 0]
    band = max(ratios) / min(ratios) if ratios else math.inf
    checks.append(Check("stability_band", band <= 3.0, band, 3.0, "max/min of the I-bound ratio"))


# ---------------------------------------------------------------------------
# entry points


def _write_snapshots(traj, directory):
    snap_dir = Path(directory) / "snapshots"
    for k, snap in enumerate(traj.snapshots):
        for name in snap.field_names():
            save_snapshot(snap.field(name), snap_dir / f"{k:03d}_{name}")


def _write_summary(directory, cfg, outcome, traj, extra=None):
    steps = traj.steps if traj is not None else []
    summary = {
        "scenario": cfg.name,
        "config_hash": config_hash(config_dict(cfg)),
        "exit_code": outcome.exit_code,
        "checks": {c.name: c.to_dict() for c in outcome.checks},
        "flags": outcome.flags,
        "steps": len(steps),
        "substeps": int(sum(s.substeps for s in steps)),
        "final_time": float(traj.times[-1]) if traj is not None else None,
        "cells": list(cfg.grid.cells),
        "h": cfg.grid_spec().h,
        "dt": cfg.solver.dt,
    }
    if extra:
        summary.update(extra)
    (Path(directory) / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))


def run_scenario(cfg: ScenarioConfig, root=None, directory=None):
    """Run one scenario end to end; returns a :class:`RunOutcome` (exit code 0 iff all checks pass)."""
    directory = Path(directory) if directory is not None else run_directory(cfg, root)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.yaml").write_text(render_config(cfg))
    traj, model, history = simulate(cfg)
    try:
        report, checks, flags = evaluate(cfg, traj, model, history, directory)
    except Exception as exc:
        raise RunError(f"scenario {cfg.name!r}: diagnostics failed after {len(traj.steps)} steps ({exc})") from exc
    if cfg.output.snapshots:
        _write_snapshots(traj, directory)
    report.write(directory)
    outcome = RunOutcome(directory, checks, flags)
    _write_summary(directory, cfg, outcome, traj)
    return outcome


def run_gamma_sweep(cfg: ScenarioConfig, root=None, directory=None):
    """Finite-gamma runs for ``cfg.sweep.gammas`` against the incompressible run of the same data."""
    directory = Path(directory) if directory is not None else run_directory(cfg, root) / "sweep"
    directory.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid_spec()
    model = cfg.growth_model()
    rho_i, n0, _ = initial_data(cfg, grid)
    p0 = rho_i.sum(axis=0)
    rows, hs = gamma_sweep(grid, p0, rho_i, sorted(cfg.sweep.gammas), cfg.run.horizon, model,
                           solver_config(cfg), obstacle_config(cfg), cfg.nutrient_model(), n0)
    write_sweep(rows, directory, {"scenario": cfg.name, "h": grid.h, "dt": cfg.solver.dt})
    finite_rows = [r for r in rows if not math.isinf(r.gamma)]
    defects = [r.defect for r in finite_rows]
    checks = [Check("defect_decreasing", all(b < a for a, b in zip(defects, defects[1:])), defects[-1], defects[0]),
              Check("defect_final", defects[-1] <= 1e-2, defects[-1], 1e-2)]
    outcome = RunOutcome(directory, checks, list(hs.flags))
    _write_summary(directory, cfg, outcome, hs, {"sweep": [
        {"gamma": r.gamma, "defect": r.defect, "p_distance": r.p_distance, "rho_distance": r.rho_distance}
        for r in finite_rows]})
    return outcome, rows


def check_run(directory):
    """Re-read ``summary.json``; returns ``(exit_code, failed check names)``."""
    directory = Path(directory)
    path = directory / "summary.json"
    if not path.exists():
        raise FileNotFoundError(f"{directory} holds no summary.json")
    summary = json.loads(path.read_text())
    failed = sorted(k for k, c in summary["checks"].items() if not c["passed"])
    return (1 if failed else 0), failed


def _ratio_rows(a, b):
    """Ratios of matching scalar constants and final series values between two runs."""
    out = []
    ra, rb = dg.read_report(a), dg.read_report(b)
    for key in sorted(set(ra.constants) & set(rb.constants)):
        va, vb = ra.constants[key], rb.constants[key]
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)) and vb != 0:
            out.append((key, va, vb, va / vb))
    names = sorted({n for n, _, _ in ra.rows} & {n for n, _, _ in rb.rows})
    for name in names:
        va, vb = ra.series(name)[-1][1], rb.series(name)[-1][1]
        if vb != 0:
            out.append((name + " (final)", va, vb, va / vb))
    return out, ra.h, rb.h


def emit_report(directory, compare=None) -> str:
    """Markdown summary of a run directory; ``compare`` adds a convergence-ratio section."""
    directory = Path(directory)
    if not directory.is_dir() or not (directory / "summary.json").exists():
        raise FileNotFoundError(f"{directory} is not a completed run directory")
    summary = json.loads((directory / "summary.json").read_text())
    lines = [f"# Run report: {summary['scenario']}", "",
             f"- cells: {summary['cells']}, h = {summary['h']:.6g}, dt = {summary['dt']:.6g}",
             f"- steps: {summary['steps']} ({summary['substeps']} substeps), final time {summary['final_time']}",
             f"- exit code: {summary['exit_code']}", "", "## Checks", "",
             "| check | result | value | limit | note |", "|---|---|---|---|---|"]
    for name, c in sorted(summary["checks"].items()):
        lines.append(f"| {name} | {'PASS' if c['passed'] else 'FAIL'} | {_fmt(c['value'])} | {_fmt(c['limit'])} "
                     f"| {c['note']} |")
    if (directory / "diagnostics.json").exists():
        rep = dg.read_report(directory)
        lines += ["", "## Functionals", "", "| functional | samples | first | last |", "|---|---|---|---|"]
        for name in sorted({n for n, _, _ in rep.rows}):
            ser = rep.series(name)
            lines.append(f"| {name} | {len(ser)} | {_fmt(ser[0][1])} | {_fmt(ser[-1][1])} |")
        lines += ["", "## Constants", ""]
        for key in sorted(rep.constants):
            val = rep.constants[key]
            if isinstance(val, (int, float, str)):
                lines.append(f"- {key}: {_fmt(val)}")
            else:
                lines.append(f"- {key}: `{json.dumps(val, sort_keys=True, default=str)}`")
    if summary["flags"]:
        lines += ["", "## Flags", ""] + [f"- {f}" for f in summary["flags"]]
    if compare is not None:
        rows, ha, hb = _ratio_rows(directory, Path(compare))
        lines += ["", "## Convergence ratios", "", f"h = {ha:.6g} against h = {hb:.6g}", "",
                  "| quantity | this run | other run | ratio |", "|---|---|---|---|"]
        for name, va, vb, r in rows:
            lines.append(f"| {name} | {_fmt(va)} | {_fmt(vb)} | {_fmt(r)} |")
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
