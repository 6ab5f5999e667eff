"""The invariant battery behind ``supercooled verify``.

Each check returns a :class:`CheckResult` with the measured value and the
threshold it was held to. Configurations are fixed here so the battery
means the same thing on every machine; only the seed count and the worker
count are configurable.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .cadlag import StepFunction, TimeGrid, sup_distance, write_columns
from .mckean import (
    FiniteDifference, MonteCarlo, ShiftResolutionWarning, SolverConfig, gamma_fd, gamma_mc,
    solve_minimal,
)
from .particle import audit_physical_jumps, iterate_gamma_N, resolve_cascade, simulate_minimal
from .randomness import PointMass, Uniform


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.6g} (threshold {self.threshold:.6g}) {self.detail}".rstrip()


def results_csv(results: list[CheckResult], header: str | None = None) -> str:
    return write_columns({
        "check": np.array([r.name for r in results], dtype=object),
        "passed": np.array([int(r.passed) for r in results], dtype=np.int64),
        "value": np.array([r.value for r in results]),
        "threshold": np.array([r.threshold for r in results]),
    }, header=header)


def reflection_cdf(x0: float, t: np.ndarray) -> np.ndarray:
    """P(a Brownian motion started at x0 > 0 has hit 0 by time t)."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = 2.0 * norm.cdf(-x0 / np.sqrt(t[pos]))
    return out


def check_cascade_examples() -> CheckResult:
    cases = [
        (resolve_cascade([0.4, 0.5], 3, 1.0, 1), 1),
        (resolve_cascade([1.5, 2.0], 2, 1.0, 0), 0),
        (resolve_cascade([0.4, 0.9, 1.6], 4, 2.0, 1), 3),
    ]
    bad = sum(k != want for k, want in cases)
    return CheckResult("cascade examples", bad == 0, bad, 0, "mismatching cases")


def check_particle_battery(seeds: int, Ns=(1, 2, 5, 20, 50)) -> list[CheckResult]:
    """Cascade audit, oracle equivalence and the iterate error bound."""
    grid = TimeGrid(1.0, 200)
    law = Uniform(0.0, 1.0)
    alpha = 1.5
    audit_bad = equiv_bad = bound_bad = mono_bad = 0
    worst = 0.0
    for N in Ns:
        for seed in range(seeds):
            run = simulate_minimal(N, alpha, law, grid, seed, audit=True)
            audit_bad += len(audit_physical_jumps(run))
            its, ds, _ = iterate_gamma_N(N, N, alpha, law, grid, seed, return_defaults=True)
            if not (its[-1] == run.loss and np.array_equal(ds, run.default_step)):
                equiv_bad += 1
            for k, it in enumerate(its, 1):
                d = sup_distance(it, run.loss)
                worst = max(worst, d - (N - k) / N)
                if d > (N - k) / N:
                    bound_bad += 1
            mono_bad += sum(not (a <= b) for a, b in zip(its, its[1:]))
    runs = len(Ns) * seeds
    return [
        CheckResult("physical jump audit", audit_bad == 0, audit_bad, 0, f"violations over {runs} runs"),
        CheckResult("oracle equivalence", equiv_bad == 0, equiv_bad, 0, f"mismatches over {runs} runs"),
        CheckResult("iterate error bound", bound_bad == 0, max(worst, 0.0), 0,
                    "largest excess of sup error over (N-k)/N"),
        CheckResult("particle iterate monotonicity", mono_bad == 0, mono_bad, 0, "decreasing pairs"),
    ]


def check_closed_form_fd() -> CheckResult:
    grid = TimeGrid(1.0, 1000)
    cfg = SolverConfig(0.0, PointMass(1.0), grid, FiniteDifference(dx=5e-3))
    ell, _ = gamma_fd(StepFunction.zeros(grid), cfg)
    err = float(np.max(np.abs(ell.values[1:] - reflection_cdf(1.0, grid.times[1:]))))
    return CheckResult("closed form (fd)", err <= 5e-3, err, 5e-3, "sup error vs 2*Phi(-1/sqrt(t))")


def check_closed_form_mc(workers: int = 1) -> CheckResult:
    grid = TimeGrid(1.0, 1000)
    cfg = SolverConfig(0.0, PointMass(1.0), grid, MonteCarlo(100_000, 0, True, workers))
    ell = gamma_mc(StepFunction.zeros(grid), cfg)
    err = float(np.max(np.abs(ell.values[1:] - reflection_cdf(1.0, grid.times[1:]))))
    end = abs(float(ell.values[-1]) - 2 * norm.cdf(-1.0))
    ok = err <= 0.015 and end <= 0.01
    return CheckResult("closed form (mc)", ok, err, 0.015, f"sup error; |value at 1 - 0.31731| = {end:.4g}")


def check_fd_solve() -> list[CheckResult]:
    """Conservation and iterate monotonicity on a configuration with a jump."""
    grid = TimeGrid(1.0, 500)
    cfg = SolverConfig(1.0, PointMass(0.4), grid, FiniteDifference(dx=1e-2))
    worst_res = 0.0
    worst_dec = 0.0
    prev = StepFunction.zeros(grid)
    for _ in range(40):
        with warnings.catch_warnings():
            # the jump is the point of this configuration
            warnings.simplefilter("ignore", ShiftResolutionWarning)
            new, hist = gamma_fd(prev, cfg)
        worst_res = max(worst_res, float(np.max(np.abs(hist.residual))))
        worst_dec = max(worst_dec, float(np.max(prev.values - new.values)))
        if sup_distance(new, prev) < cfg.tol:
            break
        prev = new
    return [
        CheckResult("fd conservation", worst_res <= 1e-8, worst_res, 1e-8, "max |absorbed + surviving - 1|"),
        CheckResult("fd iterate monotonicity", worst_dec <= 1e-12, worst_dec, 1e-12, "largest decrease"),
    ]


def check_mc_monotonicity(workers: int = 1) -> CheckResult:
    grid = TimeGrid(1.0, 400)
    cfg = SolverConfig(1.0, PointMass(0.4), grid, MonteCarlo(5000, 7, True, workers), k_max=60)
    sol = solve_minimal(cfg, record_iterates=True)
    its = sol.iterates
    bad = sum(not (a <= b) for a, b in zip(its, its[1:]))
    return CheckResult("mc iterate monotonicity", bad == 0, bad, 0, f"decreasing pairs over {len(its)} iterates")


def check_alpha_zero_fixed_point() -> CheckResult:
    grid = TimeGrid(1.0, 500)
    cfg = SolverConfig(0.0, PointMass(1.0), grid, FiniteDifference(dx=1e-2))
    sol = solve_minimal(cfg)
    ref, _ = gamma_fd(StepFunction.zeros(grid), cfg)
    ok = sol.converged and sol.iterations == 1 and sol.loss == ref
    return CheckResult("alpha = 0 fixed point", ok, sol.iterations, 1, "iterations to converge")


def run_battery(seeds: int = 20, workers: int = 1) -> list[CheckResult]:
    out = [check_cascade_examples()]
    out += check_particle_battery(seeds)
    out.append(check_closed_form_fd())
    out.append(check_closed_form_mc(workers))
    out += check_fd_solve()
    out.append(check_mc_monotonicity(workers))
    out.append(check_alpha_zero_fixed_point())
    return out


__all__ = ["CheckResult", "reflection_cdf", "results_csv", "run_battery"]
