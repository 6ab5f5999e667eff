import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from supercooled.cadlag import GridMismatchError, StepFunction, TimeGrid, levy_distance, sup_distance
from supercooled.checks import reflection_cdf
from supercooled.mckean import (
    FiniteDifference, MonteCarlo, ShiftResolutionWarning, SolverConfig, SubDensity,
    check_physical_jump, gamma, gamma_fd, gamma_mc, initial_masses, physical_jump_size,
    solve_minimal, write_solution,
)
from supercooled.randomness import Exponential, PointMass, Uniform

GRID = TimeGrid(1.0, 1000)
SMALL = TimeGrid(1.0, 100)

# P(min of B over [0, t] started uniformly on (0, 1) reaches 0), from adaptive quadrature
# of 2 Phi(-x / sqrt(t)) over x in (0, 1)
UNIFORM01_HIT = {0.25: 0.390451577784603, 0.5: 0.5139350418877441, 1.0: 0.6312536196274927}

# barrier 0.3 from t = 0.5 on, alpha 1, PointMass(1); FD reference at n = 16000, dx = 1.25e-3
HEAVISIDE_REFERENCE = {0.25: 0.045507, 0.5: 0.19424, 0.75: 0.356508, 1.0: 0.434744}


def fd(alpha, law, grid=GRID, dx=5e-3, **kw):
    return SolverConfig(alpha, law, grid, FiniteDifference(dx=dx), **kw)


def test_reflection_principle_fd():
    ell, _ = gamma_fd(StepFunction.zeros(GRID), fd(0.0, PointMass(1.0)))
    err = np.max(np.abs(ell.values - reflection_cdf(1.0, GRID.times)))
    assert err <= 5e-3


def test_reflection_principle_mc():
    cfg = SolverConfig(0.0, PointMass(1.0), GRID, MonteCarlo(100_000, 0, True))
    ell = gamma_mc(StepFunction.zeros(GRID), cfg)
    assert np.max(np.abs(ell.values - reflection_cdf(1.0, GRID.times))) <= 0.015
    assert abs(ell.values[-1] - 0.31731) <= 0.01


def test_constant_barrier_closed_form():
    # a barrier fixed at c from time 0 shifts the start to x0 - alpha c
    with pytest.warns(ShiftResolutionWarning):
        ell, _ = gamma_fd(StepFunction.constant(GRID, 0.3), fd(1.0, PointMass(1.0)))
    exact = 2 * norm.cdf(-0.7 / np.sqrt(GRID.times[1:]))
    assert np.max(np.abs(ell.values[1:] - exact)) <= 5e-3


def test_uniform_start_against_quadrature():
    ell, _ = gamma_fd(StepFunction.zeros(GRID), fd(0.0, Uniform(0.0, 1.0)))
    for t, want in UNIFORM01_HIT.items():
        assert ell(t) == pytest.approx(want, abs=1e-3)


def test_far_start_is_nearly_never_absorbed():
    # Uniform(4, 6) over one unit of time: quadrature gives 7.1451e-6
    ell, _ = gamma_fd(StepFunction.zeros(GRID), fd(0.0, Uniform(4.0, 6.0)))
    assert ell.values[-1] == pytest.approx(7.1451e-6, rel=0.1)


def test_heaviside_barrier_mc_against_fd_reference():
    barrier = StepFunction.heaviside(GRID, 0.5, 0.3)
    cfg = SolverConfig(1.0, PointMass(1.0), GRID, MonteCarlo(100_000, 11, True))
    ell = gamma_mc(barrier, cfg)
    for t, want in HEAVISIDE_REFERENCE.items():
        assert ell(t) == pytest.approx(want, abs=0.01)


def test_heaviside_barrier_fd_against_fd_reference():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShiftResolutionWarning)
        ell, _ = gamma_fd(StepFunction.heaviside(GRID, 0.5, 0.3), fd(1.0, PointMass(1.0)))
    for t, want in HEAVISIDE_REFERENCE.items():
        assert ell(t) == pytest.approx(want, abs=5e-3)


def test_initial_masses_conserve_mass_and_mean():
    x = np.arange(1001) * 0.01
    mass, absorbed = initial_masses(Uniform(2.0, 3.0), 0.5, x)
    assert absorbed == 0.0
    assert mass.sum() == pytest.approx(1.0, abs=1e-14)
    assert (mass * x).sum() == pytest.approx(3.0, abs=1e-10)


def test_initial_mass_at_or_below_zero_is_absorbed():
    x = np.arange(501) * 0.01
    mass, absorbed = initial_masses(PointMass(0.2), -0.3, x)
    assert absorbed == 1.0 and mass.sum() == 0.0


def test_solver_config_validation():
    with pytest.raises(ValueError):
        fd(-1.0, PointMass(1.0))
    with pytest.raises(ValueError):
        SolverConfig(1.0, PointMass(1.0), GRID, FiniteDifference(dx=0.0))
    with pytest.raises(ValueError, match="x_max"):
        SolverConfig(1.0, Uniform(4, 6), GRID, FiniteDifference(x_max=5.0))
    with pytest.raises(ValueError):
        SolverConfig(1.0, PointMass(1.0), GRID, MonteCarlo(paths=0))
    with pytest.raises(ValueError):
        fd(1.0, PointMass(1.0), k_max=0)


def test_barrier_grid_must_match():
    with pytest.raises(GridMismatchError):
        gamma(StepFunction.zeros(SMALL), fd(1.0, PointMass(1.0)))


def test_large_kick_warns():
    with pytest.warns(ShiftResolutionWarning):
        gamma_fd(StepFunction.heaviside(SMALL, 0.5, 0.5), fd(1.0, PointMass(1.0), SMALL, dx=0.02))


@st.composite
def barrier_pairs(draw, grid=SMALL):
    a = np.sort(draw(st.lists(st.floats(0, 0.6), min_size=grid.n + 1, max_size=grid.n + 1)))
    lift = np.sort(draw(st.lists(st.floats(0, 0.4), min_size=grid.n + 1, max_size=grid.n + 1)))
    return StepFunction(grid, a), StepFunction(grid, np.minimum(a + lift, 1.0))


@settings(max_examples=30, deadline=None)
@given(barrier_pairs(), st.floats(0.2, 3.0))
def test_fd_gamma_monotone_and_conservative(pair, alpha):
    lo, hi = pair
    cfg = fd(alpha, Exponential(1.0), SMALL, dx=0.02)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShiftResolutionWarning)
        a, ha = gamma_fd(lo, cfg)
        b, hb = gamma_fd(hi, cfg)
    assert np.all(a.values <= b.values + 1e-12)
    assert np.max(np.abs(ha.residual)) <= 1e-8 and np.max(np.abs(hb.residual)) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(barrier_pairs(), st.integers(0, 1000))
def test_mc_gamma_monotone_exactly(pair, seed):
    lo, hi = pair
    cfg = SolverConfig(1.0, Uniform(0, 2), SMALL, MonteCarlo(2000, seed))
    assert gamma_mc(lo, cfg) <= gamma_mc(hi, cfg)


def test_fd_iterates_monotone_through_blow_up():
    cfg = fd(1.0, PointMass(0.4), TimeGrid(1.0, 500), dx=1e-2)
    sol = solve_minimal(cfg, record_iterates=True)
    its = [StepFunction.zeros(cfg.grid)] + sol.iterates
    assert min(float(np.min(b.values - a.values)) for a, b in zip(its, its[1:])) >= -1e-12
    assert sol.converged


def test_solution_is_a_fixed_point():
    cfg = fd(0.8, Exponential(1.0), TimeGrid(1.0, 400), dx=1e-2)
    sol = solve_minimal(cfg)
    assert sol.converged and sol.residual < cfg.tol
    assert sup_distance(gamma(sol.loss, cfg), sol.loss) <= 2 * cfg.tol


def test_backends_agree_without_jumps():
    grid = TimeGrid(1.0, 200)
    a = solve_minimal(fd(0.5, Uniform(0, 2), grid))
    b = solve_minimal(SolverConfig(0.5, Uniform(0, 2), grid, MonteCarlo(50_000, 1)))
    assert sup_distance(a.loss, b.loss) <= 0.01
    assert levy_distance(a.loss, b.loss) <= 0.02


def test_alpha_zero_needs_one_iteration():
    sol = solve_minimal(fd(0.0, Uniform(0.5, 1.5), SMALL, dx=0.02))
    assert sol.converged and sol.iterations == 1 and sol.residual == 0.0


def test_iteration_budget_reports_non_convergence():
    sol = solve_minimal(fd(1.0, PointMass(0.4), TimeGrid(1.0, 200), dx=0.02, k_max=2))
    assert not sol.converged and sol.iterations == 2 and len(sol.residuals) == 2


def test_physical_jump_of_half_density_is_zero():
    # nu([0, x]) = x / 2 lies below the diagonal immediately
    x = np.arange(2001) * 1e-3
    dens = SubDensity(0.0, x, np.full(x.size, 0.5e-3), 0.0)
    assert physical_jump_size(dens, 1.0) <= 1e-3


@pytest.mark.parametrize("alpha,want", [(1.0, 1.0), (2.0, 1.0), (0.5, 0.5)])
def test_physical_jump_of_two_atoms(alpha, want):
    # half the mass at 0, half at 0.3
    dens = SubDensity(0.0, np.array([0.0, 0.3]), np.array([0.5, 0.5]), 0.0)
    assert physical_jump_size(dens, alpha) == pytest.approx(want)


def test_boundary_mass_counts_at_zero():
    dens = SubDensity(0.0, np.array([0.1, 0.2]), np.array([0.2, 0.2]), 0.0, boundary_mass=0.3)
    # values 0.3, 0.5, 0.7 on [0, 0.1), [0.1, 0.2), [0.2, inf): first below x at 0.7
    assert physical_jump_size(dens, 1.0) == pytest.approx(0.7)


def test_no_jump_gives_empty_audit():
    sol = solve_minimal(fd(0.5, Uniform(1, 2), SMALL, dx=0.02))
    assert check_physical_jump(sol.loss, sol.history, 0.5) == []


def test_blow_up_jump_is_physical():
    sol = solve_minimal(fd(1.0, PointMass(0.4), TimeGrid(1.0, 500), dx=1e-2), capture_jumps=0.05)
    (audit,) = check_physical_jump(sol.loss, sol.history, 1.0, 0.05)
    assert audit.jump >= 0.25
    assert audit.lower_bound_ok and audit.discrepancy <= 1e-10


def test_audit_needs_density_history():
    sol = solve_minimal(fd(1.0, PointMass(0.4), TimeGrid(1.0, 200), dx=0.02))
    with pytest.raises(ValueError):
        check_physical_jump(sol.loss, None, 1.0)


def test_write_solution_and_iterates(tmp_path):
    sol = solve_minimal(fd(0.5, Uniform(0.5, 1.0), SMALL, dx=0.02), record_iterates=True)
    paths = write_solution(sol, tmp_path, header="solve")
    assert [p.name for p in paths] == ["lambda.csv", "iterates.csv"]
    lines = paths[1].read_text().splitlines()
    assert lines[1] == "t," + ",".join(f"iter_{k}" for k in range(1, sol.iterations + 1))
    assert StepFunction.from_csv(paths[0]) == sol.loss


def test_snapshots_in_the_moving_frame():
    cfg = fd(1.0, PointMass(0.4), TimeGrid(1.0, 500), dx=1e-2)
    sol = solve_minimal(cfg, snapshot_every=100)
    h = sol.history
    assert [s.t for s in h.snapshots] == pytest.approx([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    for s, j in zip(h.snapshots, range(0, 501, 100)):
        assert s.surviving + s.absorbed == pytest.approx(1.0, abs=1e-8)
        assert s.absorbed == pytest.approx(sol.loss.values[j], abs=1e-12)
        assert s.x[0] >= -cfg.backend.dx
    assert h.csv().startswith("t,x,p\n")
