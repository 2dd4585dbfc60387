"""Command-line entry point: ``pmeflow run|sweep-gamma|check|report|preset``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import BUILTIN_PRESETS, ConfigError, load_config, preset_config, preset_text
from .runner import OUTPUT_ROOT_ENV, RunError, check_run, emit_report, run_gamma_sweep, run_scenario


def _load(ref, args):
    """A config file path or the name of a built-in preset."""
    path = Path(ref)
    cfg = load_config(path) if path.exists() else preset_config(ref)
    return cfg.with_overrides(cells=args.resolution_override, dt=args.dt_override)


def _print_checks(outcome, quiet):
    if quiet:
        return
    for c in outcome.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:24s} value={c.value:.6g} limit={c.limit:.6g}")
    for f in outcome.flags:
        print(f"flag: {f}")
    print(f"output: {outcome.directory}")


def cmd_run(args):
    cfg = _load(args.config, args)
    outcome = run_scenario(cfg, root=args.output_root, directory=args.out)
    _print_checks(outcome, args.quiet)
    return outcome.exit_code


def cmd_sweep(args):
    cfg = _load(args.config, args)
    outcome, rows = run_gamma_sweep(cfg, root=args.output_root, directory=args.out)
    if not args.quiet:
        print(f"{'gamma':>8s} {'defect':>12s} {'|p-p_inf|':>12s} {'|rho-rho_inf|':>14s} {'seconds':>8s}")
        for r in rows:
            print(f"{r.gamma:8g} {r.defect:12.4e} {r.p_distance:12.4e} {r.rho_distance:14.4e} {r.runtime:8.2f}")
    _print_checks(outcome, args.quiet)
    return outcome.exit_code


def cmd_check(args):
    code, failed = check_run(args.run_dir)
    if not args.quiet:
        print("all checks passed" if not failed else "failed: " + ", ".join(failed))
    return code


def cmd_report(args):
    text = emit_report(args.run_dir, compare=args.compare)
    if args.write:
        Path(args.run_dir, "report.md").write_text(text)
    if not args.quiet:
        sys.stdout.write(text)
    return 0


def cmd_preset(args):
    if args.name is None:
        print("\n".join(BUILTIN_PRESETS))
    else:
        sys.stdout.write(preset_text(args.name))
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress console output")
    common.add_argument("--resolution-override", type=int, default=None, metavar="N",
                        help="cells per axis")
    common.add_argument("--dt-override", type=float, default=None, metavar="DT", help="solver time step")
    common.add_argument("--output-root", default=None,
                        help=f"root for relative output dirs (default: ${OUTPUT_ROOT_ENV} or .)")

    parser = argparse.ArgumentParser(prog="pmeflow", description="Porous media flow-map simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one scenario")
    p.add_argument("config", help="YAML config file or built-in preset name")
    p.add_argument("--out", default=None, help="explicit run directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-gamma", parents=[common], help="finite-gamma runs against the Hele-Shaw limit")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", parents=[common], help="exit status of a finished run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", parents=[common], help="markdown summary of a run")
    p.add_argument("run_dir")
    p.add_argument("--compare", default=None, help="second run dir for convergence ratios")
    p.add_argument("--write", action="store_true", help="also write report.md into the run dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("preset", parents=[common], help="list presets or print one as YAML")
    p.add_argument("name", nargs="?")
    p.set_defaults(func=cmd_preset)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except (RunError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
