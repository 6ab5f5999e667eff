"""Run configuration: namespaced ``key = value`` files with command-line overrides.

Every key has a typed default; unknown keys and out-of-range values are
rejected before any computation starts. The resolved configuration is
embedded as ``#`` comments at the top of every CSV the CLI writes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .cadlag import TimeGrid
from .mckean import FiniteDifference, MonteCarlo, SolverConfig
from .randomness import InitialLaw, parse_law


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError(f"not an integer: {s!r}")
    return int(f)


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(_int(p) for p in s.split(",") if p.strip())


def _opt_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "auto", "none") else float(s)


def _text(s: str) -> str:
    return s.strip()


# key -> (parser, default text, description)
KEYS: dict[str, tuple] = {
    "model.alpha": (float, "1.0", "feedback strength alpha >= 0"),
    "model.law": (_text, "point:1.0", "initial law: point:x0 | uniform:a,b | exponential:rate | empirical:path"),
    "model.shift": (float, "0.0", "constant added to every initial position"),
    "grid.T": (float, "1.0", "time horizon"),
    "grid.n": (_int, "1000", "number of time steps"),
    "backend.kind": (_text, "fd", "fd (finite differences) or mc (Monte Carlo)"),
    "backend.mc.paths": (_int, "100000", "Monte Carlo paths"),
    "backend.mc.seed": (_int, "0", "Monte Carlo seed"),
    "backend.mc.bridge": (_bool, "true", "Brownian-bridge crossing correction"),
    "backend.fd.dx": (float, "0.005", "spatial step"),
    "backend.fd.x_max": (_opt_float, "auto", "right end of the spatial grid (auto from law and horizon)"),
    "solve.k_max": (_int, "200", "maximum fixed-point iterations"),
    "solve.tol": (float, "1e-4", "stopping tolerance on successive iterates (sup distance)"),
    "solve.record_iterates": (_bool, "false", "write every iterate to iterates.csv"),
    "particle.N": (_int, "1000", "number of particles"),
    "particle.seed": (_int, "0", "particle seed"),
    "particle.bridge": (_bool, "true", "Brownian-bridge crossing correction"),
    "stefan.snapshots": (_int, "200", "number of time slices in the heat map"),
    "stefan.x_stride": (_int, "4", "keep every k-th spatial node in the heat map"),
    "experiment.kind": (_text, "perturbed", "perturbed (shift alpha N^-gamma) or shifted (shift -x)"),
    "experiment.gamma": (float, "0.25", "perturbation exponent in (0, 1/2)"),
    "experiment.x_shift": (float, "0.1", "constant shift x of the shifted study"),
    "experiment.Ns": (_int_list, "100,1000,10000", "particle counts, strictly increasing"),
    "experiment.reps": (_int, "20", "repetitions per particle count"),
    "experiment.seed": (_int, "0", "seed of repetition 0 (rep r uses seed + r)"),
    "experiment.delta_sys": (float, "0.05", "increment threshold for a systemic event"),
    "experiment.delta_conf": (float, "0.01", "confidence parameter of the DKW band"),
    "refine.halvings": (_int, "1", "number of dt (and dx) halvings"),
    "refine.max_cells": (_int, "500000000", "largest time steps x spatial nodes per solve"),
    "verify.seeds": (_int, "20", "seeds per check in the verify battery"),
    "output.dir": (_text, "out", "output directory"),
    "run.workers": (_int, "1", "worker threads (results do not depend on it)"),
}


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value.strip()
    return out


@dataclass(frozen=True)
class RunConfig:
    values: dict

    @classmethod
    def from_sources(cls, path=None, overrides: dict[str, str] | None = None) -> RunConfig:
        raw = {k: spec[1] for k, spec in KEYS.items()}
        if path is not None:
            raw.update(parse_lines(Path(path).read_text(), str(path)))
        for k, v in (overrides or {}).items():
            if k not in KEYS:
                raise ConfigError(f"unknown key {k!r}")
            raw[k] = str(v)
        vals = {}
        for k, (parse, _, _) in KEYS.items():
            try:
                vals[k] = parse(raw[k])
            except ValueError as exc:
                raise ConfigError(f"{k} = {raw[k]!r}: {exc}") from None
        cfg = cls(vals)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def text(self, key) -> str:
        v = self.values[key]
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        if v is None:
            return "auto"
        return repr(v) if isinstance(v, float) else str(v)

    def validate(self):
        v = self.values
        checks = [
            (v["model.alpha"] >= 0 and math.isfinite(v["model.alpha"]), "model.alpha must be finite and >= 0"),
            (math.isfinite(v["model.shift"]), "model.shift must be finite"),
            (v["grid.T"] > 0, "grid.T must be positive"),
            (v["grid.n"] >= 1, "grid.n must be at least 1"),
            (v["backend.kind"] in ("fd", "mc"), "backend.kind must be fd or mc"),
            (v["backend.mc.paths"] >= 1, "backend.mc.paths must be at least 1"),
            (0 <= v["backend.mc.seed"] < 2**64, "backend.mc.seed must fit in 64 bits"),
            (v["backend.fd.dx"] > 0, "backend.fd.dx must be positive"),
            (v["solve.k_max"] >= 1, "solve.k_max must be at least 1"),
            (v["solve.tol"] > 0, "solve.tol must be positive"),
            (v["particle.N"] >= 1, "particle.N must be at least 1"),
            (0 <= v["particle.seed"] < 2**64, "particle.seed must fit in 64 bits"),
            (v["stefan.snapshots"] >= 1, "stefan.snapshots must be at least 1"),
            (v["stefan.x_stride"] >= 1, "stefan.x_stride must be at least 1"),
            (v["experiment.kind"] in ("perturbed", "shifted"), "experiment.kind must be perturbed or shifted"),
            (0 < v["experiment.gamma"] < 0.5, "experiment.gamma must lie in (0, 1/2)"),
            (len(v["experiment.Ns"]) >= 1 and all(n >= 1 for n in v["experiment.Ns"])
             and all(b > a for a, b in zip(v["experiment.Ns"], v["experiment.Ns"][1:])),
             "experiment.Ns must be positive and strictly increasing"),
            (v["experiment.reps"] >= 1, "experiment.reps must be at least 1"),
            (0 <= v["experiment.seed"] < 2**63, "experiment.seed out of range"),
            (0 < v["experiment.delta_sys"] <= 1, "experiment.delta_sys must lie in (0, 1]"),
            (0 < v["experiment.delta_conf"] < 1, "experiment.delta_conf must lie in (0, 1)"),
            (v["refine.halvings"] >= 1, "refine.halvings must be at least 1"),
            (v["refine.max_cells"] >= 1, "refine.max_cells must be positive"),
            (v["verify.seeds"] >= 1, "verify.seeds must be at least 1"),
            (v["run.workers"] >= 1, "run.workers must be at least 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.solver_config()
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None

    # ---- typed views -------------------------------------------------

    def law(self) -> InitialLaw:
        return parse_law(self["model.law"])

    def grid(self) -> TimeGrid:
        return TimeGrid(self["grid.T"], self["grid.n"])

    def backend(self):
        if self["backend.kind"] == "mc":
            return MonteCarlo(self["backend.mc.paths"], self["backend.mc.seed"],
                              self["backend.mc.bridge"], self["run.workers"])
        return FiniteDifference(self["backend.fd.dx"], self["backend.fd.x_max"])

    def solver_config(self, backend=None) -> SolverConfig:
        return SolverConfig(self["model.alpha"], self.law(), self.grid(),
                            backend if backend is not None else self.backend(),
                            self["model.shift"], self["solve.k_max"], self["solve.tol"])

    def header(self, command: str) -> str:
        """Provenance block: program, subcommand and every resolved key."""
        lines = [f"supercooled {__version__} {command}"]
        lines += [f"{k} = {self.text(k)}" for k in KEYS]
        return "\n".join(lines)


def describe_keys() -> str:
    width = max(len(k) for k in KEYS)
    return "\n".join(f"{k:<{width}}  (default {spec[1]})  {spec[2]}" for k, spec in KEYS.items())
