"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected by ``conftest.py`` and printed in the terminal
summary. Expensive solves are cached so criteria that share a
configuration (iterate monotonicity, conservation) reuse them.
Running everything takes roughly ten minutes on one core; the
alpha = 10, Uniform(4, 6), T = 12 solve and its halved refinement dominate.
"""
import time
import warnings
from functools import cache

import numpy as np

from supercooled.analysis import dkw_validation, perturbed_study, systemic_event_time
from supercooled.cadlag import StepFunction, TimeGrid, csv_body, read_columns, sup_distance
from supercooled.checks import reflection_cdf
from supercooled.cli import main
from supercooled.mckean import (
    FiniteDifference, MonteCarlo, ShiftResolutionWarning, SolverConfig, gamma_fd, gamma_mc,
    solve_minimal,
)
from supercooled.particle import audit_physical_jumps, iterate_gamma_N, simulate_minimal
from supercooled.randomness import Exponential, PointMass, Uniform
from supercooled.stefan import build_field

DELTA_SYS = 0.05


def quiet_solve(cfg, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShiftResolutionWarning)
        return solve_minimal(cfg, **kw)


@cache
def blow_up_solution(n=1000, dx=5e-3):
    cfg = SolverConfig(1.0, PointMass(0.4), TimeGrid(1.0, n), FiniteDifference(dx=dx))
    return quiet_solve(cfg, record_iterates=(n == 1000))


@cache
def strong_feedback_solution(n=12_000, dx=5e-3, record=True):
    cfg = SolverConfig(10.0, Uniform(4.0, 6.0), TimeGrid(12.0, n), FiniteDifference(dx=dx))
    extra = dict(record_iterates=True, snapshot_every=n // 240, capture_jumps=DELTA_SYS) if record else {}
    return quiet_solve(cfg, **extra)


@cache
def exponential_reference():
    cfg = SolverConfig(1.0, Exponential(1.0), TimeGrid(1.0, 1000), FiniteDifference(dx=5e-3))
    return quiet_solve(cfg)


@cache
def closed_form_fd():
    grid = TimeGrid(1.0, 1000)
    cfg = SolverConfig(0.0, PointMass(1.0), grid, FiniteDifference(dx=5e-3))
    return gamma_fd(StepFunction.zeros(grid), cfg)


@cache
def particle_battery():
    """Every particle run of criteria 2 and 3, simulated with the cascade audit on."""
    grid = TimeGrid(1.0, 200)
    law, alpha = Uniform(0.0, 1.0), 1.5
    equiv = []
    for N in range(1, 51):
        for seed in range(20):
            run = simulate_minimal(N, alpha, law, grid, seed, audit=True)
            its, ds, _ = iterate_gamma_N(N, N, alpha, law, grid, seed, return_defaults=True)
            equiv.append((run, its, ds))
    bound = []
    for seed in range(100):
        run = simulate_minimal(20, alpha, law, grid, 1000 + seed, audit=True)
        its = iterate_gamma_N(20, 20, alpha, law, grid, 1000 + seed)
        bound.append((run, its))
    return equiv, bound


def test_c01_closed_form_first_passage(report_criterion):
    grid = TimeGrid(1.0, 1000)
    exact = reflection_cdf(1.0, grid.times)
    t0 = time.perf_counter()
    cfg = SolverConfig(0.0, PointMass(1.0), grid, MonteCarlo(100_000, 0, True))
    mc = gamma_mc(StepFunction.zeros(grid), cfg)
    t_mc = time.perf_counter() - t0
    t0 = time.perf_counter()
    fd, _ = closed_form_fd()
    t_fd = time.perf_counter() - t0
    err_mc = float(np.max(np.abs(mc.values - exact)))
    end_mc = abs(float(mc.values[-1]) - 0.31731)
    err_fd = float(np.max(np.abs(fd.values - exact)))
    ok = err_mc <= 0.015 and end_mc <= 0.01 and err_fd <= 5e-3 and t_mc <= 30 and t_fd <= 30
    assert report_criterion(
        1, "closed-form first passage", ok,
        f"mc sup err {err_mc:.4g} (<= 0.015), |mc(1) - 0.31731| {end_mc:.3g} (<= 0.01), "
        f"fd sup err {err_fd:.3g} (<= 5e-3), runtimes {t_mc:.1f}s / {t_fd:.1f}s (<= 30s)")


def test_c02_oracle_equivalence(report_criterion):
    equiv, _ = particle_battery()
    bad = sum(not (its[-1] == run.loss and np.array_equal(ds, run.default_step))
              for run, its, ds in equiv)
    assert report_criterion(2, "oracle equivalence", bad == 0,
                            f"{bad} mismatches over {len(equiv)} runs (N = 1..50, 20 seeds)")


def test_c03_iterate_error_bound(report_criterion):
    _, bound = particle_battery()
    bad = 0
    worst = -1.0
    for run, its in bound:
        for k, it in enumerate([StepFunction.zeros(run.grid)] + its):
            excess = sup_distance(it, run.loss) - (20 - k) / 20
            worst = max(worst, excess)
            bad += excess > 0
    assert report_criterion(3, "iterate error bound", bad == 0,
                            f"{bad} violations over 100 seeds x k = 0..20; "
                            f"largest sup error minus (N-k)/N = {worst:.3g}")


def test_c04_physical_jump_audit(report_criterion):
    equiv, bound = particle_battery()
    runs = [r for r, _, _ in equiv] + [r for r, _ in bound]
    bad = sum(len(audit_physical_jumps(r)) for r in runs)
    steps = sum(r.grid.n + 1 for r in runs)
    assert report_criterion(4, "physical-jump audit", bad == 0,
                            f"{bad} realised increments differ from the least-k scan "
                            f"({steps} steps in {len(runs)} runs)")


def test_c05_monotone_iteration(report_criterion):
    grid = TimeGrid(1.0, 1000)
    cfg = SolverConfig(1.0, PointMass(0.4), grid, MonteCarlo(20_000, 3, True))
    mc = solve_minimal(cfg, record_iterates=True).iterates
    mc_bad = sum(not (a <= b) for a, b in zip(mc, mc[1:]))

    def worst_decrease(its):
        its = [StepFunction.zeros(its[0].grid)] + its
        return max(float(np.max(a.values - b.values)) for a, b in zip(its, its[1:]))

    fd_dec = max(worst_decrease(blow_up_solution().iterates),
                 worst_decrease(strong_feedback_solution().iterates))
    ok = mc_bad == 0 and fd_dec <= 1e-12
    assert report_criterion(5, "monotone iteration", ok,
                            f"mc: {mc_bad} decreasing pairs over {len(mc)} iterates; "
                            f"fd: largest decrease {fd_dec:.3g} (<= 1e-12)")


def test_c06_blow_up(report_criterion):
    base = np.diff(blow_up_solution().loss.values).max()
    half = np.diff(blow_up_solution(2000, 2.5e-3).loss.values).max()
    rel = abs(half - base) / base
    ok = base >= 0.25 and rel <= 0.2
    assert report_criterion(6, "blow-up", ok,
                            f"largest one-step increment {base:.4f} (>= 0.25), "
                            f"halved dt and dx {half:.4f}, relative change {rel:.3f} (<= 0.2)")


def test_c07_strong_feedback_heat_map(report_criterion, tmp_path):
    sol = strong_feedback_solution()
    half = strong_feedback_solution(24_000, 2.5e-3, record=False)
    its = [StepFunction.zeros(sol.loss.grid)] + sol.iterates
    dec = max(float(np.max(a.values - b.values)) for a, b in zip(its, its[1:]))
    t_sys = systemic_event_time(sol.loss, DELTA_SYS)
    t_half = systemic_event_time(half.loss, DELTA_SYS)
    stable = t_sys is not None and t_half is not None and abs(t_half - t_sys) <= 0.05

    field = build_field(sol.loss, sol.history, 10.0)
    _, front_path = field.write(tmp_path)
    front = read_columns(front_path)
    jump_at = None
    if t_sys is not None:
        j = sol.loss.grid.index_of(t_sys)
        jump_at = float(front["front"][j] - front["front"][j - 1])
    front_ok = (bool(np.all(np.diff(front["front"]) >= 0)) and jump_at is not None
                and jump_at >= 10.0 * DELTA_SYS)
    ok = sol.converged and sol.iterations <= 200 and dec <= 1e-12 and stable and front_ok
    assert report_criterion(
        7, "strong-feedback heat map", ok,
        f"converged={sol.converged} in {sol.iterations} iterations (<= 200), "
        f"largest decrease {dec:.3g}, t_sys {t_sys} vs halved {t_half} (within 0.05), "
        f"front monotone with jump {jump_at} at t_sys")


def test_c08_dkw_validation(report_criterion):
    barrier = exponential_reference().loss
    dist, band = dkw_validation(barrier, 1.0, Exponential(1.0), 100, 10_000, seed=2024)
    inside = int(np.count_nonzero(dist <= band))
    assert report_criterion(8, "DKW validation", inside >= 97,
                            f"{inside}/100 batches within {band:.4f} (need >= 97); "
                            f"median distance {np.median(dist):.4g}")


def test_c09_perturbed_propagation(report_criterion):
    ref = exponential_reference()
    Ns = [100, 1000, 10_000]
    rep = perturbed_study(Ns, 0.25, 1.0, Exponential(1.0), 20, 0, ref)
    pointwise_bad = 0
    for n, row in zip(Ns, rep.losses):
        for r, ell in enumerate(row):
            plain = simulate_minimal(n, 1.0, Exponential(1.0), ref.loss.grid, r).loss
            pointwise_bad += not (ell <= plain)
    ok = rep.strictly_decreasing() and pointwise_bad == 0
    meds = ", ".join(f"{m:.4g}" for m in rep.medians)
    assert report_criterion(9, "perturbed propagation of minimality", ok,
                            f"median Levy distances {meds} (strictly decreasing); "
                            f"{pointwise_bad} runs where the perturbed loss exceeds the unperturbed")


def test_c10_fd_conservation(report_criterion):
    sols = [blow_up_solution(), blow_up_solution(2000, 2.5e-3), strong_feedback_solution(),
            strong_feedback_solution(24_000, 2.5e-3, record=False), exponential_reference()]
    worst = max(s.conservation for s in sols)
    worst = max(worst, float(np.max(np.abs(closed_form_fd()[1].residual))))
    assert report_criterion(10, "FD conservation", worst <= 1e-8,
                            f"max |absorbed + surviving - 1| = {worst:.3g} over every step of "
                            f"every FD application (<= 1e-8)")


def test_c11_reproducibility(report_criterion, tmp_path):
    commands = {
        "verify": (["verify"], "verify.csv"),
        "solve mc": (["solve", "--backend", "mc", "--alpha", "1", "--law", "point:0.4"], "lambda.csv"),
        "solve fd": (["solve", "--alpha", "1", "--law", "point:0.4"], "lambda.csv"),
    }
    differing = []
    for name, (args, out) in commands.items():
        bodies = []
        for w in (1, 4):
            d = tmp_path / f"{name.replace(' ', '_')}_{w}"
            status = main([*args, "--workers", str(w), "--out", str(d)])
            bodies.append((status, csv_body((d / out).read_text())))
        if bodies[0] != bodies[1] or bodies[0][0] != 0:
            differing.append(name)
    assert report_criterion(11, "reproducibility", not differing,
                            f"worker counts 1 and 4: {', '.join(differing) or 'all'} "
                            f"{'differ' if differing else 'byte-identical with exit status 0'}")
