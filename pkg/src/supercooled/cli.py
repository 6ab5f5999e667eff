"""Command-line front-end.

Usage: ``supercooled <command> [-c FILE] [--set key=value ...] [shortcuts]``.
Run ``supercooled keys`` for the full list of configuration keys.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

from .analysis import (
    ResourceGuardError, perturbed_study, refinement_csv, refinement_study, shifted_study,
    systemic_event_time,
)
from .cadlag import csv_body, jumps
from .checks import results_csv, run_battery
from .config import ConfigError, RunConfig, describe_keys
from .mckean import FiniteDifference, ShiftResolutionWarning, check_physical_jump, solve_minimal, write_solution
from .particle import simulate_minimal
from .stefan import build_field

EXIT_CONFIG = 2
EXIT_RESOURCE = 3
EXIT_CHECK_FAILED = 1

# shortcut flag -> configuration keys it sets
SHORTCUTS = {
    "alpha": ("model.alpha",),
    "law": ("model.law",),
    "shift": ("model.shift",),
    "T": ("grid.T",),
    "n": ("grid.n",),
    "backend": ("backend.kind",),
    "paths": ("backend.mc.paths",),
    "dx": ("backend.fd.dx",),
    "N": ("particle.N",),
    "seed": ("particle.seed", "backend.mc.seed", "experiment.seed"),
    "out": ("output.dir",),
    "workers": ("run.workers",),
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="key = value configuration file")
    common.add_argument("-s", "--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    for name in SHORTCUTS:
        common.add_argument(f"--{name}", help=f"sets {', '.join(SHORTCUTS[name])}")

    p = argparse.ArgumentParser(prog="supercooled", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [
        ("simulate", "particle system: loss.csv and defaults.csv"),
        ("solve", "minimal solution by fixed-point iteration: lambda.csv (+ iterates.csv)"),
        ("stefan", "temperature heat map and freezing front: field.csv, front.csv"),
        ("converge", "propagation-of-minimality study: distances.csv, summary.csv"),
        ("verify", "invariant battery; nonzero exit status on any failure"),
        ("refine", "dt/dx refinement table: refine.csv"),
    ]:
        sub.add_parser(name, parents=[common], help=text, description=text)
    sub.add_parser("keys", help="list configuration keys and defaults")
    return p


def _resolve(args) -> RunConfig:
    overrides = {}
    for name, keys in SHORTCUTS.items():
        val = getattr(args, name, None)
        if val is not None:
            for k in keys:
                overrides[k] = val
    for item in args.set:
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    return RunConfig.from_sources(args.config, overrides)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def cmd_simulate(cfg: RunConfig, out: Path, header: str) -> int:
    run = simulate_minimal(cfg["particle.N"], cfg["model.alpha"], cfg.law(), cfg.grid(),
                           cfg["particle.seed"], cfg["model.shift"], cfg["particle.bridge"])
    paths = run.write(out, header=header)
    t_sys = systemic_event_time(run.loss, cfg["experiment.delta_sys"])
    print(f"L^N(T) = {run.loss.values[-1]:.6g}; first jump >= {cfg['experiment.delta_sys']}: {t_sys}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _solve(cfg: RunConfig, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShiftResolutionWarning)
        return solve_minimal(cfg.solver_config(), **kw)


def cmd_solve(cfg: RunConfig, out: Path, header: str) -> int:
    sol = _solve(cfg, record_iterates=cfg["solve.record_iterates"])
    paths = write_solution(sol, out, header)
    state = "converged" if sol.converged else "NOT converged"
    print(f"{state} after {sol.iterations} iterations (residual {sol.residual:.3g}); "
          f"Lambda(T) = {sol.loss.values[-1]:.6g}")
    found = jumps(sol.loss, cfg["experiment.delta_sys"])
    if found:
        print("jumps: " + ", ".join(f"t={t:.6g} size={d:.4g}" for t, d in found))
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_stefan(cfg: RunConfig, out: Path, header: str) -> int:
    n = cfg["grid.n"]
    every = max(1, n // cfg["stefan.snapshots"])
    delta = cfg["experiment.delta_sys"]
    sol = _solve(cfg, record_iterates=cfg["solve.record_iterates"], snapshot_every=every,
                 capture_jumps=delta)
    field = build_field(sol.loss, sol.history, cfg["model.alpha"])
    stride = cfg["stefan.x_stride"]
    field.x, field.u = field.x[::stride], field.u[:, ::stride]
    paths = list(field.write(out, header)) + write_solution(sol, out, header)
    t_sys = systemic_event_time(sol.loss, delta)
    print(f"{'converged' if sol.converged else 'NOT converged'} after {sol.iterations} iterations; "
          f"t_sys = {t_sys}")
    for a in check_physical_jump(sol.loss, sol.history, cfg["model.alpha"], delta):
        print(f"jump at t={a.t:.6g}: size {a.jump:.4g}, physical condition {a.physical:.4g}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_converge(cfg: RunConfig, out: Path, header: str) -> int:
    ref_cfg = cfg.solver_config()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShiftResolutionWarning)
        kw = dict(bridge=cfg["particle.bridge"], workers=cfg["run.workers"])
        if cfg["experiment.kind"] == "perturbed":
            report = perturbed_study(cfg["experiment.Ns"], cfg["experiment.gamma"], cfg["model.alpha"],
                                     cfg.law(), cfg["experiment.reps"], cfg["experiment.seed"],
                                     ref_cfg, **kw)
        else:
            report = shifted_study(cfg["experiment.Ns"], cfg["experiment.x_shift"], cfg["model.alpha"],
                                   cfg.law(), cfg["experiment.reps"], cfg["experiment.seed"],
                                   ref_cfg, **kw)
    paths = report.write(out, header)
    print(f"reference: {report.reference}")
    for n, m, q in zip(report.Ns, report.medians, report.iqrs):
        print(f"N={n}: median Levy distance {m:.4g} (IQR {q:.3g})")
    print(f"written {len(paths)} files under {out}")
    return 0


def cmd_verify(cfg: RunConfig, out: Path, header: str) -> int:
    results = run_battery(cfg["verify.seeds"], cfg["run.workers"])
    for r in results:
        print(r.line())
    p = _write(out / "verify.csv", results_csv(results, header))
    print(f"wrote {p}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return 0


def cmd_refine(cfg: RunConfig, out: Path, header: str) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShiftResolutionWarning)
        rows = refinement_study(cfg.solver_config(), cfg["refine.halvings"],
                                cfg["experiment.delta_sys"], cfg["refine.max_cells"])
    p = _write(out / "refine.csv", refinement_csv(rows, header))
    print(csv_body(p.read_text()), end="")
    print(f"wrote {p}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate, "solve": cmd_solve, "stefan": cmd_stefan,
    "converge": cmd_converge, "verify": cmd_verify, "refine": cmd_refine,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "keys":
        print(describe_keys())
        return 0
    try:
        cfg = _resolve(args)
        if args.command == "stefan" and not isinstance(cfg.backend(), FiniteDifference):
            raise ConfigError("stefan needs the finite-difference backend (backend.kind = fd)")
        out = Path(cfg["output.dir"])
        return COMMANDS[args.command](cfg, out, cfg.header(args.command))
    except ConfigError as exc:
        print(f"supercooled: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceGuardError as exc:
        print(f"supercooled: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
