"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Thresholds are the stated ones; nothing here is tuned to the measured values.
Heavy runs are shared through session fixtures.
"""
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from pmeflow import flow
from pmeflow.analytic import Barenblatt, heat_kernel_gaussian, poisson_cap_1d
from pmeflow.config import parse_config, preset_dict
from pmeflow.diagnostics import read_report
from pmeflow.fields import GridSpec, ScalarField, integral, load_snapshot
from pmeflow.hele_shaw import ObstacleConfig, solve_complementarity
from pmeflow.runner import run_gamma_sweep, run_scenario, simulate

pytestmark = pytest.mark.acceptance


def record(log, number, title, passed, detail):
    line = f"criterion {number:2d} [{title}]: {'PASS' if passed else 'FAIL'} ({detail})"
    log.append(line)
    print(line)
    return passed


def scenario(preset, cells=None, dt=None, **sections):
    doc = preset_dict(preset)
    for key, val in sections.items():
        if isinstance(val, dict) and isinstance(doc.get(key), dict):
            doc[key].update(val)
        else:
            doc[key] = val
    if cells is not None:
        doc["grid"]["cells"] = [cells] * doc["grid"]["dim"]
    if dt is not None:
        doc.setdefault("solver", {})["dt"] = dt
    return parse_config(doc)


def finished(cfg, root):
    out = run_scenario(cfg, directory=Path(root) / f"{cfg.name}_{cfg.grid.cells[0]}")
    return out, read_report(out.directory), json.loads((out.directory / "summary.json").read_text())


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def barenblatt_512(runs):
    cfg = scenario("barenblatt")
    start = time.perf_counter()
    traj, model, _ = simulate(cfg)
    elapsed = time.perf_counter() - start
    return cfg, traj, elapsed


@pytest.fixture(scope="session")
def two_blob(runs):
    out = {}
    for cells, dt in ((512, 0.003), (1024, 0.0015)):
        out[cells] = finished(scenario("two-blob-segregation", cells, dt), runs)
    return out


@pytest.fixture(scope="session")
def two_blob_hs(runs):
    out = {}
    for cells, dt in ((512, 0.003), (1024, 0.0015)):
        cfg = scenario("two-blob-segregation", cells, dt, name="two-blob-hs", law={"gamma": "inf"},
                       diagnostics={"enabled": ["mass", "max_pressure", "mixing"]})
        out[cells] = finished(cfg, runs)
    return out


@pytest.fixture(scope="session")
def counterexample(runs):
    return finished(scenario("segregation-counterexample"), runs)


@pytest.fixture(scope="session")
def tumor(runs):
    return finished(scenario("tumor-nutrient-disk"), runs)


def fitted_radius(p, x):
    """Support radius of the least-squares cap ``a - b x^2`` through the upper part of ``p``."""
    keep = p > 0.2 * p.max()
    b, a = np.polyfit(x[keep] ** 2, p[keep], 1)
    return math.sqrt(a / -b)


# ---------------------------------------------------------------------------


def test_criterion_01_barenblatt_accuracy(barenblatt_512, acceptance_log):
    cfg, traj, elapsed = barenblatt_512
    grid = traj.grid
    bb = Barenblatt(2.0, 1, 1.0)
    errs = []
    for t, dens in zip(traj.times, traj.densities):
        exact = bb.density(t, grid.radius2())
        errs.append(integral(np.abs(dens.sum(axis=0) - exact), grid) / integral(exact, grid))
    x = grid.axes()[0]
    radii = [fitted_radius(p, x) for p in traj.pressures]
    slope = np.polyfit(np.log(traj.times), np.log(radii), 1)[0]
    ok = max(errs) <= 0.02 and abs(slope - bb.beta) <= 0.02 and elapsed < 60
    record(acceptance_log, 1, "Barenblatt accuracy", ok,
           f"max rel L1 {max(errs):.3e} <= 2e-2; exponent {slope:.4f} vs {bb.beta:.4f} +- 0.02; "
           f"runtime {elapsed:.1f}s < 60s")
    assert ok


def test_criterion_02_conservation(barenblatt_512, two_blob, tumor, acceptance_log):
    _, traj, _ = barenblatt_512
    masses = [integral(d.sum(axis=0), traj.grid) for d in traj.densities]
    drift = max(abs(m - masses[0]) for m in masses) / masses[0]
    ledgers = {}
    for label, (_, rep, _) in (("two-blob", two_blob[512]), ("tumor", tumor)):
        m0 = rep.series("mass")[0][1]
        ledgers[label] = abs(rep.constants["mass_ledger"]) / m0
    ok = drift <= 1e-10 and all(v <= 1e-2 for v in ledgers.values())
    record(acceptance_log, 2, "conservation", ok,
           f"G=0 relative drift {drift:.2e} <= 1e-10; ledger residuals "
           + ", ".join(f"{k} {v:.2e}" for k, v in ledgers.items()) + " <= 1e-2")
    assert ok


def test_criterion_03_maximum_principle(two_blob, two_blob_hs, counterexample, tumor, acceptance_log):
    worst = {}
    for label, (_, rep, summ) in (("two-blob", two_blob[512]), ("two-blob-hs", two_blob_hs[512]),
                                   ("counterexample", counterexample), ("tumor", tumor)):
        if not rep.constants["assumptions"]["G2"]["passed"]:
            continue
        p_h = rep.constants["p_h"]
        worst[label] = max(v for _, v in rep.series("max_pressure")) / p_h
    ok = bool(worst) and all(v <= 1 + 1e-6 for v in worst.values())
    record(acceptance_log, 3, "maximum principle", ok,
           "max p / p_h: " + ", ".join(f"{k} {v:.6f}" for k, v in worst.items()) + " <= 1 + 1e-6")
    assert ok


def test_criterion_04_flow_map_consistency(acceptance_log):
    levels = [(256, 0.02), (512, 0.01), (1024, 0.005)]
    inv, semi = [], []
    for cells, dt in levels:
        cfg = scenario("barenblatt", cells, dt)
        traj, _, _ = simulate(cfg)
        src = flow.VelocitySource.from_trajectory(traj)
        inv.append(flow.check_inversion(src, traj.final, 1.0, 1.0, solver_dt=dt).relative)
        semi.append(flow.check_semigroup(src, traj.snapshots[0], 1.0, 1.0, 0.5, solver_dt=dt).relative)
    ratios = {"inversion": [a / b for a, b in zip(inv, inv[1:])],
              "semigroup": [a / b for a, b in zip(semi, semi[1:])]}
    ok = all(1.5 <= r <= 2.5 for rs in ratios.values() for r in rs)
    record(acceptance_log, 4, "flow-map self-consistency", ok,
           f"inversion {['%.2e' % v for v in inv]} ratios {['%.2f' % r for r in ratios['inversion']]}; "
           f"semigroup {['%.2e' % v for v in semi]} ratios {['%.2f' % r for r in ratios['semigroup']]}; "
           "band [1.5, 2.5]")
    assert ok


def test_criterion_05_representation(two_blob, acceptance_log):
    errs = {}
    for cells, (_, rep, _) in two_blob.items():
        errs[cells] = max(v for name, _, v in rep.rows if name.startswith("representation_l1_"))
    ok = errs[512] <= 0.05 and errs[1024] < errs[512]
    record(acceptance_log, 5, "representation formula", ok,
           f"max species block-L1 {errs[512]:.3e} at N=512 <= 5e-2; {errs[1024]:.3e} at N=1024 (must improve)")
    assert ok


def test_criterion_06_pushforward(runs, acceptance_log):
    cfg = scenario("barenblatt", diagnostics={"enabled": ["mass", "flows"]})
    _, rep, _ = finished(cfg, runs)
    err = rep.constants["pushforward_l1"]
    ok = err <= 0.03
    record(acceptance_log, 6, "pushforward sandwich", ok, f"block-averaged L1 {err:.3e} at N=512 <= 3e-2")
    assert ok


def _mixing(rep):
    masses = dict(rep.series("mass"))
    return max(v / masses[t] for t, v in rep.series("mixing_1_2"))


def test_criterion_07_nonmixing(two_blob, two_blob_hs, counterexample, acceptance_log):
    level, halving = {}, {}
    for label, family in (("gamma=10", two_blob), ("gamma=inf", two_blob_hs)):
        coarse, fine = _mixing(family[512][1]), _mixing(family[1024][1])
        level[label] = coarse
        halving[label] = coarse / max(fine, 1e-300)
    negative = _mixing(counterexample[1])
    contrast = negative / max(level["gamma=inf"], 1e-300)
    ok = (all(v <= 1e-3 for v in level.values()) and all(r >= 1.5 for r in halving.values())
          and contrast >= 10)
    record(acceptance_log, 7, "nonmixing", ok,
           "max int min(rho1,rho2)/mass at N=512: "
           + ", ".join(f"{k} {v:.2e}" for k, v in level.items()) + " <= 1e-3; refinement ratios "
           + ", ".join(f"{k} {v:.2f}" for k, v in halving.items()) + " >= 1.5 (halving); "
           f"negative control {negative:.2e} = {contrast:.2f}x positive >= 10x")
    assert ok


@pytest.fixture(scope="session")
def barenblatt_long(runs):
    cfg = scenario("barenblatt", run={"horizon": 3.0},
                   diagnostics={"enabled": ["mass", "ab", "weighted_l1", "hessian", "stability"],
                                "sample_times": []},
                   probes={"eps": [1e-1, 1e-2, 1e-3, 1e-4], "mode": 1,
                           "pairs": [[0.0, 1.0], [1.0, 1.0], [0.5, 0.5]]})
    return finished(cfg, runs)


def test_criterion_08_ab_bound(barenblatt_long, acceptance_log):
    _, rep, _ = barenblatt_long
    lows = np.array([v for _, v in rep.series("ab_gamma_lap_p_t")])
    variation = (lows.max() - lows.min()) / abs(lows.mean())
    ab = np.array([v for _, v in rep.series("ab_functional")])
    bounded = bool(np.all(np.isfinite(ab)) and np.all(np.diff(ab) >= -1e-14))
    ok = variation <= 0.10 and bounded
    record(acceptance_log, 8, "AB-type bound", ok,
           f"min gamma lap p * t in [{lows.min():.4f}, {lows.max():.4f}], variation {variation:.3f} <= 0.10; "
           f"int omega u_+^2 final {ab[-1]:.4e}, fitted rate {rep.constants['ab_rate']:.4e}")
    assert ok


def test_criterion_09_stability(barenblatt_long, acceptance_log):
    _, rep, summ = barenblatt_long
    rows = sorted(rep.constants["stability"], key=lambda r: -r["eps"])
    dist = [max(r["forward"], r["backward"]) for r in rows]
    ratios = [r["i_ratio"] for r in rows]
    mono = all(b < a for a, b in zip(dist, dist[1:]))
    band = max(ratios) / min(ratios)
    ok = mono and band <= 3.0
    record(acceptance_log, 9, "stability law", ok,
           f"sup int rho_bar|X-S| over eps {[r['eps'] for r in rows]}: {['%.2e' % d for d in dist]} "
           f"(monotone {mono}); I-ratio {['%.4f' % r for r in ratios]}, band {band:.2f} <= 3")
    assert ok


def test_criterion_10_hele_shaw_limit(runs, acceptance_log):
    cfg = scenario("two-blob-segregation", name="sweep")
    outcome, rows = run_gamma_sweep(cfg, directory=Path(runs) / "sweep")
    finite = [r for r in rows if not math.isinf(r.gamma)]
    defects = [r.defect for r in finite]
    decreasing = all(b < a for a, b in zip(defects, defects[1:]))

    grid = GridSpec((-1.0,), (1.0,), (128,))
    x = grid.axes()[0]
    radius = x[np.argmin(np.abs(x - 0.5))]  # cap edge on a cell centre
    rho = np.where(np.abs(x) < radius - 1e-12, 1.0, 0.3)
    ocfg = ObstacleConfig(tol_ob=1e-10)
    res = solve_complementarity(ScalarField(grid, rho), ScalarField(grid, np.full(grid.shape, 2.0)), ocfg)
    cap_err = float(np.max(np.abs(res.pressure.values - poisson_cap_1d(x, radius, 2.0))))
    cap_tol = 2 * grid.h**2 + ocfg.tol_ob

    ok = decreasing and defects[-1] <= 1e-2 and cap_err <= cap_tol
    record(acceptance_log, 10, "Hele-Shaw limit", ok,
           "||p(1-rho)||_L1(Q_T) for gamma " + ", ".join(f"{r.gamma:g}: {r.defect:.3e}" for r in finite)
           + f" (strictly decreasing {decreasing}; final <= 1e-2); "
           f"obstacle cap error {cap_err:.2e} <= {cap_tol:.2e}")
    assert ok


def test_criterion_11_nutrient(runs, tumor, acceptance_log):
    alpha, width = 0.1, 0.5
    cfg = scenario("tumor-nutrient-disk", name="heat",
                   nutrient={"enabled": True, "alpha": alpha, "beta": [0.0],
                             "initial": {"kind": "gaussian", "amplitude": 1.0, "width": width}},
                   diagnostics={"enabled": ["mass", "nutrient"], "sample_times": []})
    out, _, _ = finished(cfg, runs)
    n_start = load_snapshot(out.directory / "snapshots" / "000_n")
    n_end = load_snapshot(out.directory / "snapshots" / "001_n")
    grid = n_end.grid
    elapsed = n_end.t - n_start.t
    exact = heat_kernel_gaussian(grid.radius2(), elapsed, alpha, grid.dim, 1.0, width)
    err = integral(np.abs(n_end.values - exact), grid) / integral(exact, grid)
    consts = tumor[1].constants["nutrient"]
    finite = all(math.isfinite(v) and v > 0 for v in consts.values())
    ok = err <= 0.01 and finite and tumor[2]["checks"]["nutrient_bounds"]["passed"]
    record(acceptance_log, 11, "nutrient solver", ok,
           f"beta=0 heat-kernel rel L1 {err:.3e} at t={elapsed:g} <= 1e-2; measured constants "
           + ", ".join(f"{k} {v:.3f}" for k, v in consts.items()) + "; 0 <= n <= max n0 held")
    assert ok


def _tree(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(Path(directory).rglob("*")) if p.is_file()}


def test_criterion_12_determinism(runs, acceptance_log):
    mismatches = []
    for name in ("barenblatt", "tumor-nutrient-disk"):
        trees = []
        for threads in ("1", "4"):
            out = Path(runs) / f"det_{name}_{threads}"
            env = dict(os.environ, OMP_NUM_THREADS=threads, OPENBLAS_NUM_THREADS=threads,
                       MKL_NUM_THREADS=threads)
            subprocess.run([sys.executable, "-m", "pmeflow", "run", name, "--out", str(out), "--quiet"],
                           env=env, check=False)
            trees.append(_tree(out))
        if trees[0].keys() != trees[1].keys():
            mismatches.append(f"{name}: file sets differ")
        mismatches += [f"{name}/{k}" for k in trees[0] if trees[0][k] != trees[1].get(k)]
        nfiles = len(trees[0])
        assert nfiles > 0
    ok = not mismatches
    record(acceptance_log, 12, "determinism", ok,
           "bit-identical report trees at 1 and 4 threads" if ok else "differs: " + ", ".join(mismatches[:5]))
    assert ok
